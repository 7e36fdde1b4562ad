"""Gate set tomography: design, CPTP maximum likelihood, gauge fixing, reports.

Gate set: the entangling gate and +π/2 X and Z rotations on each qubit,
plus the prepared state and a four-outcome measurement.

Parameterisation (every point is a valid gate set):

* gate: Choi factor ``A`` with ``C = (Y⊗I) A A† (Y⊗I)``,
  ``Y = (4 Tr_out AA†)^{-1/2}``, so ``Tr_out C = I/4`` exactly;
* state: ``ρ = a a† / Tr(a a†)``;
* measurement: ``E_m = S^{-1/2} B_m B_m† S^{-1/2}``, ``S = Σ B_m B_m†``.

Probabilities for all circuits sharing a germ power ``W = g^l`` come out
of one product ``Ev · W · R`` (measurement rows × prepared columns), and
gradients are propagated by hand through these products.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
import math

import numpy as np
import scipy.linalg
from scipy.optimize import least_squares, minimize

from . import circuits, qcore
from .circuits import Op

GATE_OPS = (Op("Gzz", 0), Op("Gxp", 1), Op("Gxp", 2), Op("Gzp", 1), Op("Gzp", 2))
GATE_LABELS = tuple(str(op) for op in GATE_OPS)
DEFAULT_LENGTHS = (1, 2, 4, 8, 16, 32, 64)
REFERENCE_PARAMETER_COUNT = 1026


class GstError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# design
# ---------------------------------------------------------------------------

def _ops(text: str) -> tuple[Op, ...]:
    return circuits.parse_circuit(text)


_PREP_1Q = ("", "Gxp:{q}", "Gxp:{q} Gxp:{q}", "Gxp:{q} Gzp:{q}")
_MEAS_1Q = ("", "Gxp:{q}", "Gzp:{q} Gxp:{q}")


def _products(singles) -> list[tuple[Op, ...]]:
    out = []
    for a in singles:
        for b in singles:
            text = " ".join(t for t in (a.format(q=1), b.format(q=2)) if t)
            out.append(_ops(text) if text else ())
    return out


def prep_frame(fiducials, rho=None, gates=None) -> np.ndarray:
    """Columns: Pauli vectors of the prepared states (ideal gates by default)."""
    rho = _ideal_rho() if rho is None else rho
    cols = []
    for f in fiducials:
        r = rho
        for op in f:
            r = (gates[str(op)] if gates else circuits.op_ptm(op)) @ r
        cols.append(r)
    return np.array(cols).T


def meas_frame(fiducials, effects=None, gates=None) -> np.ndarray:
    """Rows: measured effects pulled back through each fiducial."""
    effects = _ideal_effects() if effects is None else effects
    rows = []
    for f in fiducials:
        m = np.eye(16)
        for op in f:
            m = (gates[str(op)] if gates else circuits.op_ptm(op)) @ m
        rows.extend(effects @ m)
    return np.array(rows)


def default_prep_fiducials() -> tuple[tuple[Op, ...], ...]:
    """Products of a complete single-qubit set (+Z, -Y, -Z, +X); 16 states span the operator space."""
    return tuple(_products(_PREP_1Q))


def default_meas_fiducials() -> tuple[tuple[Op, ...], ...]:
    return tuple(_products(_MEAS_1Q)) + (_ops("Gxp:1 Gxp:1 Gxp:2 Gxp:2"),)


DEFAULT_GERM_TEXT = (
    "Gzz", "Gxp:1", "Gxp:2", "Gzp:1", "Gzp:2",
    *(f"{a} {b}" for a, b in combinations(GATE_LABELS, 2)),
    "Gxp:1 Gxp:2 Gzz", "Gzz Gzp:1 Gxp:2", "Gxp:1 Gzp:1 Gzp:1",
    "Gzz Gxp:1 Gxp:1 Gzp:2", "Gxp:1 Gzz Gzp:2 Gxp:2 Gzz",
)


def default_germs() -> tuple[tuple[Op, ...], ...]:
    return tuple(_ops(t) for t in DEFAULT_GERM_TEXT)


# Greedy selection over words of length 1-4 (up to cyclic rotation), scored at a
# randomly perturbed gate set; amplificationally complete but ~4x more circuits.
COMPLETE_GERM_TEXT = (
    "Gzz", "Gxp:1", "Gxp:2", "Gzp:1", "Gzp:2",
    "Gzz Gxp:1", "Gzz Gxp:2", "Gzz Gzp:1", "Gzz Gzp:2", "Gxp:1 Gxp:2", "Gxp:1 Gzp:1", "Gxp:1 Gzp:2",
    "Gxp:2 Gzp:1", "Gxp:2 Gzp:2", "Gzp:1 Gzp:2",
    "Gzz Gzz Gxp:1", "Gzz Gzz Gxp:2", "Gzz Gzz Gzp:1", "Gzz Gzz Gzp:2",
    *(f"Gzz {a} {b}" for a in GATE_LABELS[1:] for b in GATE_LABELS[1:]),
    "Gxp:1 Gxp:1 Gxp:2", "Gxp:1 Gxp:1 Gzp:1", "Gxp:1 Gxp:1 Gzp:2", "Gxp:1 Gxp:2 Gxp:2",
    "Gxp:1 Gxp:2 Gzp:1", "Gxp:1 Gxp:2 Gzp:2", "Gxp:1 Gzp:1 Gxp:2", "Gxp:1 Gzp:1 Gzp:1",
    "Gxp:1 Gzp:1 Gzp:2", "Gxp:1 Gzp:2 Gxp:2", "Gxp:1 Gzp:2 Gzp:1", "Gxp:1 Gzp:2 Gzp:2",
    "Gxp:2 Gxp:2 Gzp:1", "Gxp:2 Gxp:2 Gzp:2", "Gxp:2 Gzp:1 Gzp:1", "Gxp:2 Gzp:1 Gzp:2",
    "Gxp:2 Gzp:2 Gzp:1", "Gxp:2 Gzp:2 Gzp:2", "Gzp:1 Gzp:1 Gzp:2", "Gzp:1 Gzp:2 Gzp:2",
    "Gzz Gzz Gzz Gxp:1", "Gzz Gzz Gzz Gxp:2", "Gzz Gzz Gzz Gzp:1", "Gzz Gzz Gzz Gzp:2",
    "Gzz Gzz Gxp:1 Gxp:1",
)


def complete_germs() -> tuple[tuple[Op, ...], ...]:
    return tuple(_ops(t) for t in COMPLETE_GERM_TEXT)


@dataclass(frozen=True)
class GermScore:
    rank: int
    required: int
    singular_values: np.ndarray = field(repr=False)

    @property
    def complete(self) -> bool:
        return self.rank >= self.required


def _commutant_projector(x: np.ndarray, tol: float = 1e-8):
    """Map projecting a matrix onto the commutant of diagonalisable ``x``."""
    vals, vecs = np.linalg.eig(x)
    inv = np.linalg.inv(vecs)
    same = np.abs(vals[:, None] - vals[None, :]) < tol

    def project(e: np.ndarray) -> np.ndarray:
        return vecs @ (np.where(same, inv @ e @ vecs, 0.0)) @ inv
    return project


_TP_DIRECTIONS = tuple(np.eye(256)[16 * a + b].reshape(16, 16) for a in range(1, 16) for b in range(16))


def germ_jacobian(germ, gates: dict[str, np.ndarray]) -> np.ndarray:
    """Derivative of the germ PTM, projected onto its commutant, w.r.t. TP gate entries."""
    labels = list(GATE_LABELS)
    n_dir = len(_TP_DIRECTIONS)
    mats = [gates[str(op)] for op in germ]
    x = np.eye(16)
    for m in mats:
        x = m @ x
    project = _commutant_projector(x)
    jac = np.zeros((256, len(labels) * n_dir), dtype=complex)
    for pos, op in enumerate(germ):
        after, before = np.eye(16), np.eye(16)
        for m in mats[pos + 1:]:
            after = m @ after
        for m in mats[:pos]:
            before = m @ before
        k = labels.index(str(op))
        for d, e in enumerate(_TP_DIRECTIONS):
            jac[:, k * n_dir + d] += project(after @ e @ before).ravel()
    return jac


def perturbed_target(seed: int = 0, scale: float = 0.05) -> "GateSet":
    """Target gates each followed by a small random unitary (generic point for germ scoring)."""
    rng = np.random.default_rng(seed)
    gs = target_gateset()
    for label in GATE_LABELS:
        h = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        kick = scipy.linalg.expm(-0.5j * scale * (h + h.conj().T))
        gs.gates[label] = qcore.ptm_from_unitary(kick) @ gs.gates[label]
    return gs


def germ_completeness(germs=None, gateset: "GateSet | None" = None, tol: float = 1e-7) -> GermScore:
    """Amplificational completeness of a germ set at a gate set (the target by default).

    For each germ the derivative of its PTM with respect to every
    trace-preserving gate entry is projected onto the commutant of the germ
    (the directions that grow with repetition).  The stacked rank is compared
    with the number of gate parameters not reachable by a TP gauge change.
    Exact Clifford targets have accidental degeneracies, so scoring at a
    slightly perturbed gate set is the more meaningful test.
    """
    gates = (gateset or target_gateset()).gates
    germs = default_germs() if germs is None else tuple(germs)
    sv = np.linalg.svd(np.vstack([germ_jacobian(g, gates) for g in germs]), compute_uv=False)
    rank = int(np.sum(sv > tol * sv[0]))
    labels = list(GATE_LABELS)
    gauge = np.array([np.concatenate([(e @ gates[k] - gates[k] @ e).ravel() for k in labels])
                      for e in _TP_DIRECTIONS]).T
    required = len(labels) * len(_TP_DIRECTIONS) - int(np.linalg.matrix_rank(gauge, tol=1e-9))
    return GermScore(rank, required, sv)


@dataclass(frozen=True)
class GstCircuit:
    prep: int
    germ: int
    reps: int
    meas: int


@dataclass(frozen=True)
class GstDesign:
    prep_fiducials: tuple[tuple[Op, ...], ...]
    meas_fiducials: tuple[tuple[Op, ...], ...]
    germs: tuple[tuple[Op, ...], ...]
    lengths: tuple[int, ...] = DEFAULT_LENGTHS

    def reps(self, germ: int, length: int) -> int:
        return max(1, length // len(self.germs[germ]))

    def ops(self, c: GstCircuit) -> tuple[Op, ...]:
        return self.prep_fiducials[c.prep] + self.germs[c.germ] * c.reps + self.meas_fiducials[c.meas]


@dataclass
class DesignPlan:
    """Deduplicated circuits; ``level[n]`` is the first length index that needs circuit ``n``."""

    design: GstDesign
    circuits: list[GstCircuit]
    texts: list[str]
    level: list[int]

    def upto(self, length_index: int) -> list[int]:
        return [n for n, lv in enumerate(self.level) if lv <= length_index]


def _check_frames(design: GstDesign) -> None:
    for name, frame in (("preparation", prep_frame(design.prep_fiducials)),
                        ("measurement", meas_frame(design.meas_fiducials))):
        gram = frame @ frame.T if name == "preparation" else frame.T @ frame
        spectrum = np.linalg.eigvalsh(gram)
        if np.sum(spectrum > 1e-9 * spectrum.max()) < 16:
            raise GstError(f"{name} fiducials are not informationally complete; "
                           f"Gram spectrum {np.array2string(spectrum, precision=3)}")


def build_design(prep=None, meas=None, germs=None, lengths=DEFAULT_LENGTHS) -> DesignPlan:
    design = GstDesign(
        tuple(prep) if prep is not None else default_prep_fiducials(),
        tuple(meas) if meas is not None else default_meas_fiducials(),
        tuple(germs) if germs is not None else default_germs(),
        tuple(sorted(lengths)),
    )
    for seq in design.prep_fiducials + design.meas_fiducials + design.germs:
        for op in seq:
            if str(op) not in GATE_LABELS:
                raise GstError(f"operation {op} is not in the estimated gate set")
    _check_frames(design)
    seen: dict[str, int] = {}
    out_c, out_t, out_l = [], [], []
    for li, L in enumerate(design.lengths):
        for k in range(len(design.germs)):
            l = design.reps(k, L)
            for i in range(len(design.prep_fiducials)):
                for j in range(len(design.meas_fiducials)):
                    c = GstCircuit(i, k, l, j)
                    text = circuits.serialize_circuit(design.ops(c))
                    if text in seen:
                        continue
                    seen[text] = len(out_c)
                    out_c.append(c)
                    out_t.append(text)
                    out_l.append(li)
    return DesignPlan(design, out_c, out_t, out_l)


# ---------------------------------------------------------------------------
# gate sets
# ---------------------------------------------------------------------------

def _ideal_rho() -> np.ndarray:
    return qcore.state_to_vector(qcore.density_matrix(qcore.ket(0)))


def _ideal_effects() -> np.ndarray:
    return np.array([qcore.state_to_vector(qcore.density_matrix(qcore.ket(m))) for m in range(4)])


@dataclass
class GateSet:
    gates: dict[str, np.ndarray]
    rho: np.ndarray  # Pauli vector, r_i = Tr(P_i ρ)
    effects: np.ndarray  # (4, 16), e_i = Tr(P_i E)
    converged: bool = True
    info: dict = field(default_factory=dict)

    def copy(self) -> "GateSet":
        return GateSet({k: v.copy() for k, v in self.gates.items()}, self.rho.copy(),
                       self.effects.copy(), self.converged, dict(self.info))

    def transformed(self, gauge: np.ndarray) -> "GateSet":
        inv = np.linalg.inv(gauge)
        return GateSet({k: gauge @ g @ inv for k, g in self.gates.items()}, gauge @ self.rho,
                       self.effects @ inv, self.converged, dict(self.info))


def target_gateset() -> GateSet:
    return GateSet({str(op): circuits.op_ptm(op).copy() for op in GATE_OPS}, _ideal_rho(), _ideal_effects())


def predict(gateset: GateSet, circuit) -> np.ndarray:
    if isinstance(circuit, str):
        circuit = circuits.parse_circuit(circuit)
    r = gateset.rho
    for op in circuit:
        r = gateset.gates[str(op)] @ r
    p = gateset.effects @ r / qcore.DIM
    return p


# ---------------------------------------------------------------------------
# parameterisation
# ---------------------------------------------------------------------------

_CHOI_B = qcore._CHOI_BASIS  # (16, 16, 16, 16): [i, j] -> P_j^T ⊗ P_i
_N_GATE = 2 * 256
_N_STATE = 2 * 16
_N_EFFECT = 2 * 16


def _herm_func_grad(m: np.ndarray, f, df, k: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(f(m), gradient K_m) for Hermitian ``m`` given the gradient ``k`` of f(m).

    Uses the Daleckii-Krein divided differences of the spectral function.
    """
    lam, v = np.linalg.eigh(m)
    fl = f(lam)
    diff = lam[:, None] - lam[None, :]
    same = np.abs(diff) < 1e-12 * max(1.0, np.abs(lam).max())
    gamma = np.where(same, df(lam)[:, None] * np.ones_like(diff),
                     (fl[:, None] - fl[None, :]) / np.where(same, 1.0, diff))
    value = (v * fl) @ v.conj().T
    if k is None:
        return value, None
    kp = v.conj().T @ k @ v
    return value, v @ (gamma * kp) @ v.conj().T


def _inv_sqrt(x):
    return x ** -0.5


def _d_inv_sqrt(x):
    return -0.5 * x ** -1.5


def _ptr_out(m: np.ndarray) -> np.ndarray:
    return np.einsum("aibi->ab", m.reshape(4, 4, 4, 4))


def _unpack_c(x: np.ndarray, shape) -> np.ndarray:
    n = int(np.prod(shape))
    return (x[:n] + 1j * x[n:2 * n]).reshape(shape)


def _pack_grad(m: np.ndarray) -> np.ndarray:
    """Real gradient w.r.t. (Re A, Im A) from ``Re Tr(dA · m)``."""
    mt = m.T
    return np.concatenate([mt.real.ravel(), -mt.imag.ravel()])


def _gate_forward(x: np.ndarray):
    a = _unpack_c(x, (16, 16))
    ct = a @ a.conj().T
    t = _ptr_out(ct)
    y, _ = _herm_func_grad(4 * t, _inv_sqrt, _d_inv_sqrt, None)
    yb = np.kron(y, np.eye(4))
    c = yb @ ct @ yb
    ptm = np.real(np.einsum("ijab,ba->ij", _CHOI_B, c))
    return ptm, (a, ct, t, y, yb)


def _gate_backward(cache, g_ptm: np.ndarray) -> np.ndarray:
    a, ct, t, y, yb = cache
    k = np.einsum("ij,ijab->ab", g_ptm, _CHOI_B)  # dF = Re Tr(dC k)
    k_ct = yb @ k @ yb
    k_yb = ct @ yb @ k + k @ yb @ ct
    k_y = _ptr_out(k_yb)
    _, k_t4 = _herm_func_grad(4 * t, _inv_sqrt, _d_inv_sqrt, k_y)
    k_ct = k_ct + np.kron(4 * k_t4, np.eye(4))
    return _pack_grad(a.conj().T @ (k_ct + k_ct.conj().T))


def _state_forward(x: np.ndarray):
    a = _unpack_c(x, (4, 4))
    m = a @ a.conj().T
    tr = np.trace(m).real
    rho = m / tr
    return qcore.state_to_vector(rho), (a, rho, tr)


def _state_backward(cache, g_vec: np.ndarray) -> np.ndarray:
    a, rho, tr = cache
    k = np.einsum("i,iab->ab", g_vec, qcore.PAULIS)
    kh = k + k.conj().T
    mm = a.conj().T @ kh / tr - 2 * np.real(np.trace(rho @ k)) * a.conj().T / tr
    return _pack_grad(mm)


def _effects_forward(x: np.ndarray):
    bs = [_unpack_c(x[i * _N_EFFECT:(i + 1) * _N_EFFECT], (4, 4)) for i in range(4)]
    ds = [b @ b.conj().T for b in bs]
    s = sum(ds)
    z, _ = _herm_func_grad(s, _inv_sqrt, _d_inv_sqrt, None)
    es = [z @ d @ z for d in ds]
    vecs = np.array([qcore.state_to_vector(e) for e in es])
    return vecs, (bs, ds, s, z)


def _effects_backward(cache, g_vecs: np.ndarray) -> np.ndarray:
    bs, ds, s, z = cache
    ks = [np.einsum("i,iab->ab", g, qcore.PAULIS) for g in g_vecs]
    k_z = sum(d @ z @ k + k @ z @ d for d, k in zip(ds, ks))
    _, k_s = _herm_func_grad(s, _inv_sqrt, _d_inv_sqrt, k_z)
    out = []
    for b, k in zip(bs, ks):
        kd = z @ k @ z + k_s
        out.append(_pack_grad(b.conj().T @ (kd + kd.conj().T)))
    return np.concatenate(out)


def _psd_factor(m: np.ndarray, mix: float) -> np.ndarray:
    n = m.shape[0]
    m = (1 - mix) * m + mix * np.trace(m).real * np.eye(n) / n
    lam, v = np.linalg.eigh((m + m.conj().T) / 2)
    return v * np.sqrt(np.clip(lam, 0, None))


def pack(gateset: GateSet, mix: float = 1e-3) -> np.ndarray:
    """Parameters for a gate set, nudged into the interior by ``mix``.

    The nudge keeps every Choi factor full rank; a rank-deficient factor
    would sit on a saddle of the likelihood.
    """
    parts = []
    for label in GATE_LABELS:
        c = qcore.ptm_to_choi(gateset.gates[label])
        a = _psd_factor(c, mix)
        parts.append(np.concatenate([a.real.ravel(), a.imag.ravel()]))
    rho = qcore.vector_to_state(gateset.rho)
    a = _psd_factor(rho, mix)
    parts.append(np.concatenate([a.real.ravel(), a.imag.ravel()]))
    for e in gateset.effects:
        b = _psd_factor(qcore.vector_to_state(e * qcore.DIM) / qcore.DIM, mix)
        parts.append(np.concatenate([b.real.ravel(), b.imag.ravel()]))
    return np.concatenate(parts)


def unpack(theta: np.ndarray) -> GateSet:
    gates = {}
    off = 0
    for label in GATE_LABELS:
        gates[label] = _gate_forward(theta[off:off + _N_GATE])[0]
        off += _N_GATE
    rho = _state_forward(theta[off:off + _N_STATE])[0]
    off += _N_STATE
    effects = _effects_forward(theta[off:off + 4 * _N_EFFECT])[0]
    return GateSet(gates, rho, effects)


N_PARAMS = len(GATE_LABELS) * _N_GATE + _N_STATE + 4 * _N_EFFECT


def parameter_counts(n_gates: int = len(GATE_LABELS)) -> dict[str, int]:
    """Model parameter counts for two qubits.

    raw: full 16x16 PTMs, 16-vector state, four 16-vector effects;
    tp: trace preservation, unit-trace state, effects summing to identity;
    gauge_reduced: tp minus the 240-dimensional TP gauge group.
    """
    raw = n_gates * 256 + 16 + 4 * 16
    tp = n_gates * 240 + 15 + 3 * 16
    return {"raw": raw, "tp": tp, "gauge_reduced": tp - 240, "reference": REFERENCE_PARAMETER_COUNT}


# ---------------------------------------------------------------------------
# likelihood
# ---------------------------------------------------------------------------

_P_MIN = 1e-9


def _chain(mats: list[np.ndarray]) -> np.ndarray:
    out = np.eye(16)
    for m in mats:
        out = m @ out
    return out


def _chain_backward(mats: list[np.ndarray], k: np.ndarray) -> list[np.ndarray]:
    """Gradients w.r.t. each factor of ``M_n ... M_1`` given the gradient ``k`` of the product."""
    n = len(mats)
    before = [np.eye(16)]
    for m in mats[:-1]:
        before.append(m @ before[-1])
    after = [np.eye(16)] * n
    acc = np.eye(16)
    for t in range(n - 1, -1, -1):
        after[t] = acc
        acc = acc @ mats[t]
    return [after[t].T @ k @ before[t].T for t in range(n)]


def _log_clipped(p):
    """log p, continued quadratically below _P_MIN; returns (value, derivative)."""
    safe = np.maximum(p, _P_MIN)
    val = np.log(safe)
    der = 1.0 / safe
    low = p < _P_MIN
    if np.any(low):
        d = p[low] - _P_MIN
        val[low] = math.log(_P_MIN) + d / _P_MIN - d * d / (2 * _P_MIN**2)
        der[low] = 1.0 / _P_MIN - d / _P_MIN**2
    return val, der


class LikelihoodModel:
    """Negative log-likelihood of a gate set on a subset of design circuits."""

    def __init__(self, plan: DesignPlan, counts: np.ndarray, subset=None):
        design = plan.design
        idx = range(len(plan.circuits)) if subset is None else subset
        self.design = design
        self.n_prep = len(design.prep_fiducials)
        self.n_meas = len(design.meas_fiducials)
        blocks: dict[tuple[int, int], np.ndarray] = {}
        self.n_circuits = 0
        for n in idx:
            c = plan.circuits[n]
            arr = blocks.setdefault((c.germ, c.reps), np.zeros((self.n_meas, 4, self.n_prep)))
            arr[c.meas, :, c.prep] = counts[n]
            self.n_circuits += 1
        self.blocks = [(k, l, arr.reshape(self.n_meas * 4, self.n_prep)) for (k, l), arr in sorted(blocks.items())]
        self.max_reps: dict[int, int] = {}
        for k, l, _ in self.blocks:
            self.max_reps[k] = max(self.max_reps.get(k, 0), l)
        counts_sub = np.array([counts[n] for n in idx], dtype=float)
        totals = counts_sub.sum(axis=1, keepdims=True)
        nz = counts_sub > 0
        self.total_counts = float(counts_sub.sum())
        self.logl_max = float(np.sum(counts_sub[nz] * np.log(counts_sub[nz] / np.broadcast_to(totals, counts_sub.shape)[nz])))

    def _labels(self, seq):
        return [str(op) for op in seq]

    def objective(self, theta: np.ndarray, want_grad: bool = True):
        off = 0
        gates, caches = {}, {}
        for label in GATE_LABELS:
            gates[label], caches[label] = _gate_forward(theta[off:off + _N_GATE])
            off += _N_GATE
        rho, rho_cache = _state_forward(theta[off:off + _N_STATE])
        off += _N_STATE
        eff, eff_cache = _effects_forward(theta[off:off + 4 * _N_EFFECT])

        d = self.design
        prep_mats = [[gates[x] for x in self._labels(f)] for f in d.prep_fiducials]
        meas_mats = [[gates[x] for x in self._labels(f)] for f in d.meas_fiducials]
        prep_prod = [_chain(m) for m in prep_mats]
        meas_prod = [_chain(m) for m in meas_mats]
        R = np.stack([p @ rho for p in prep_prod], axis=1)
        Ev = np.concatenate([eff @ m for m in meas_prod], axis=0) / qcore.DIM
        germ_mats = {k: [gates[x] for x in self._labels(d.germs[k])] for k in self.max_reps}
        powers = {}
        for k, lmax in self.max_reps.items():
            g = _chain(germ_mats[k])
            pw = [np.eye(16)]
            for _ in range(lmax):
                pw.append(g @ pw[-1])
            powers[k] = np.array(pw)

        nll = 0.0
        dR = np.zeros_like(R)
        dEv = np.zeros_like(Ev)
        dW: dict[int, np.ndarray] = {k: np.zeros((16, 16)) for k in self.max_reps}
        for k, l, n in self.blocks:
            W = powers[k][l]
            EW = Ev @ W
            P = EW @ R
            mask = n > 0
            val, der = _log_clipped(P[mask])
            nll -= float(np.sum(n[mask] * val))
            if not want_grad:
                continue
            G = np.zeros_like(P)
            G[mask] = -n[mask] * der
            dR += EW.T @ G
            GR = G @ R.T
            dEv += GR @ W.T
            kw = Ev.T @ GR
            pw = powers[k]
            a = pw[:l].transpose(0, 2, 1)
            b = pw[l - 1::-1] if l > 0 else pw[:0]
            dW[k] += np.matmul(np.matmul(a, kw), b.transpose(0, 2, 1)).sum(axis=0)
        if not want_grad:
            return nll

        g_gates = {label: np.zeros((16, 16)) for label in GATE_LABELS}
        for k, kg in dW.items():
            for label, gm in zip(self._labels(d.germs[k]), _chain_backward(germ_mats[k], kg)):
                g_gates[label] += gm
        g_rho = np.zeros(16)
        for i, f in enumerate(d.prep_fiducials):
            g_rho += prep_prod[i].T @ dR[:, i]
            if f:
                kp = np.outer(dR[:, i], rho)
                for label, gm in zip(self._labels(f), _chain_backward(prep_mats[i], kp)):
                    g_gates[label] += gm
        g_eff = np.zeros_like(eff)
        for j, f in enumerate(d.meas_fiducials):
            block = dEv[4 * j:4 * j + 4] / qcore.DIM
            g_eff += block @ meas_prod[j].T
            if f:
                km = eff.T @ block
                for label, gm in zip(self._labels(f), _chain_backward(meas_mats[j], km)):
                    g_gates[label] += gm
        grad = [_gate_backward(caches[label], g_gates[label]) for label in GATE_LABELS]
        grad.append(_state_backward(rho_cache, g_rho))
        grad.append(_effects_backward(eff_cache, g_eff))
        return nll, np.concatenate(grad)

    def statistic(self, theta: np.ndarray) -> float:
        """2Δlog-likelihood against the maximal (frequency) model."""
        return 2.0 * (self.objective(theta, want_grad=False) + self.logl_max)


# ---------------------------------------------------------------------------
# estimation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GofReport:
    lengths: tuple[int, ...]
    statistics: tuple[float, ...]
    dofs: tuple[int, ...]

    @property
    def nsigma(self) -> tuple[float, ...]:
        return tuple((s - d) / math.sqrt(2 * d) for s, d in zip(self.statistics, self.dofs))


def _dof(n_circuits: int) -> int:
    d = 3 * n_circuits - parameter_counts()["gauge_reduced"]
    if d <= 0:
        raise GstError(f"{n_circuits} circuits cannot constrain the model")
    return d


def counts_for(plan: DesignPlan, data) -> np.ndarray:
    """Counts aligned with the plan, summed over repeated records."""
    by = data.by_circuit()
    try:
        return np.array([by[t] for t in plan.texts], dtype=float)
    except KeyError as exc:
        raise GstError(f"dataset lacks design circuit {exc}") from None


def _optimize(model: LikelihoodModel, theta: np.ndarray, max_iter: int, tol: float):
    scale = 1.0 / model.total_counts
    history = []

    def fun(x):
        f, g = model.objective(x)
        return f * scale, g * scale

    res = minimize(fun, theta, jac=True, method="L-BFGS-B", callback=lambda xk: history.append(None),
                   options={"maxiter": max_iter, "maxcor": 30, "ftol": 1e-16, "gtol": tol, "maxfun": 3 * max_iter})
    converged = bool(res.success) or res.status == 2  # status 2: no further decrease possible at machine precision
    return res.x, converged, int(res.nit)


def mle_fit(data, plan: DesignPlan, initial: GateSet | None = None, *, max_iter: int = 4000,
            tol: float = 1e-9, lengths: int | None = None) -> GateSet:
    """CPTP maximum-likelihood estimate, refined length by length with warm starts.

    Returns the estimate for the longest length; ``info`` holds the per-length
    fit statistics, which form the goodness-of-fit series.
    """
    counts = data if isinstance(data, np.ndarray) else counts_for(plan, data)
    theta = pack(initial or target_gateset())
    n_levels = len(plan.design.lengths) if lengths is None else lengths
    stats, dofs, iters = [], [], []
    converged = True
    for li in range(n_levels):
        model = LikelihoodModel(plan, counts, plan.upto(li))
        theta, ok, nit = _optimize(model, theta, max_iter, tol)
        converged &= ok
        stats.append(model.statistic(theta))
        dofs.append(_dof(model.n_circuits))
        iters.append(nit)
    est = unpack(theta)
    est.converged = converged
    est.info = {"gof": GofReport(tuple(plan.design.lengths[:n_levels]), tuple(stats), tuple(dofs)),
                "iterations": iters, "theta": theta}
    return est


def goodness_of_fit(estimate: GateSet, data, plan: DesignPlan) -> GofReport:
    """Nσ of a fixed estimate on the circuits up to each length."""
    counts = counts_for(plan, data) if not isinstance(data, np.ndarray) else data
    stats, dofs = [], []
    for li in range(len(plan.design.lengths)):
        sub = plan.upto(li)
        stat = 0.0
        for n in sub:
            p = predict(estimate, plan.design.ops(plan.circuits[n]))
            c = counts[n]
            nz = c > 0
            stat += 2 * float(np.sum(c[nz] * np.log(c[nz] / c.sum() / np.maximum(p[nz], _P_MIN))))
        stats.append(stat)
        dofs.append(_dof(len(sub)))
    return GofReport(tuple(plan.design.lengths), tuple(stats), tuple(dofs))


def _tp_gauge(x: np.ndarray) -> np.ndarray:
    m = np.eye(16)
    m[1:, :] = x.reshape(15, 16) + np.eye(16)[1:, :]
    return m


def _linear_gauge_start(estimate: GateSet, target: GateSet, labels, spam_weight: float) -> np.ndarray:
    # M E = T M, M rho_E = rho_T and effects_E = effects_T M are linear in M;
    # large gauge twists leave the nonlinear fit in a local minimum without this start.
    eye = np.eye(16)
    rows = [np.kron(eye, estimate.gates[k].T) - np.kron(target.gates[k], eye) for k in labels]
    rhs = [np.zeros(256) for _ in labels]
    rows.append(spam_weight * np.kron(eye, estimate.rho[None, :]))
    rhs.append(spam_weight * target.rho)
    rows.append(spam_weight * np.kron(target.effects, eye))
    rhs.append(spam_weight * estimate.effects.ravel())
    a, b = np.vstack(rows), np.concatenate(rhs)
    # first row of a TP gauge is fixed to e0
    b = b - a[:, :16] @ eye[0]
    x = np.linalg.lstsq(a[:, 16:], b, rcond=None)[0]
    return x - eye[1:].ravel()


def gauge_optimize(estimate: GateSet, target: GateSet | None = None, *, spam_weight: float = 1.0,
                   max_condition: float = 1e6) -> GateSet:
    """Trace-preserving gauge transform bringing the estimate closest to the target."""
    target = target or target_gateset()
    labels = list(estimate.gates)

    def residuals(x):
        m = _tp_gauge(x)
        inv = np.linalg.inv(m)
        parts = [(m @ estimate.gates[k] @ inv - target.gates[k]).ravel() for k in labels]
        parts.append(spam_weight * (m @ estimate.rho - target.rho))
        parts.append(spam_weight * (estimate.effects @ inv - target.effects).ravel())
        return np.concatenate(parts)

    starts = [np.zeros(15 * 16), _linear_gauge_start(estimate, target, labels, spam_weight)]
    x0 = min((x for x in starts if np.all(np.isfinite(x))), key=lambda x: np.sum(residuals(x) ** 2))
    res = least_squares(residuals, x0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)
    gauge = _tp_gauge(res.x)
    cond = np.linalg.cond(gauge)
    if cond > max_condition:
        raise GstError(f"gauge transform is ill-conditioned (condition number {cond:.3g})")
    out = estimate.transformed(gauge)
    out.info = dict(estimate.info)
    out.info["gauge"] = gauge
    return out


@dataclass
class GateReport:
    label: str
    average_infidelity: float
    process_infidelity: float
    diamond_distance: float
    diamond_bounds: tuple[float, float]
    generator: np.ndarray
    hamiltonian_norm: float
    stochastic_norm: float
    coherent_fraction: float


def report(estimate: GateSet, target: GateSet | None = None) -> dict:
    """Per-gate error metrics; the diamond distance is half the diamond norm."""
    target = target or target_gateset()
    gates = {}
    for label, g in estimate.gates.items():
        g0 = target.gates[label]
        gen = qcore.error_generator(g, g0)
        ham, sto, _ = qcore.split_generator(gen)
        bounds = qcore.diamond_bounds(g, g0)
        gates[label] = GateReport(
            label,
            qcore.average_infidelity(g, g0),
            1.0 - qcore.process_fidelity(g, g0),
            bounds.value,
            (bounds.lower, bounds.upper),
            gen,
            float(np.linalg.norm(ham)),
            float(np.linalg.norm(sto)),
            qcore.coherent_fraction(gen),
        )
    return {"gates": gates, "parameters": parameter_counts(), "converged": estimate.converged}
