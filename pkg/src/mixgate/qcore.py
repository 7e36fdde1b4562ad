"""Two-qubit channel algebra in the Pauli-transfer-matrix (PTM) picture.

Conventions used throughout the package:

* computational basis order ``|⇓↓>, |⇓↑>, |⇑↓>, |⇑↑>``; the first tensor
  factor is the Ca+ qubit, the second the Sr+ qubit, and ``|0>`` is the
  lower (⇓ / ↓) state,
* Pauli-product basis ``II, IX, IY, IZ, XI, ..., ZZ`` (second qubit fastest),
* ``R[i, j] = Tr(P_i Λ(P_j)) / 4``,
* Choi matrices act on ``input ⊗ output`` and are normalised to unit trace.

Every function takes and returns plain ``numpy`` arrays and has no side
effects.
"""

from __future__ import annotations

from dataclasses import dataclass
import itertools

import numpy as np
import scipy.linalg

DIM = 4
NPAULI = 16

_I2 = np.eye(2, dtype=complex)
_X2 = np.array([[0, 1], [1, 0]], dtype=complex)
_Y2 = np.array([[0, -1j], [1j, 0]], dtype=complex)
_Z2 = np.array([[1, 0], [0, -1]], dtype=complex)
PAULI_1Q = (_I2, _X2, _Y2, _Z2)
PAULI_LABELS = tuple(a + b for a, b in itertools.product("IXYZ", repeat=2))

PAULIS = np.array([np.kron(a, b) for a, b in itertools.product(PAULI_1Q, repeat=2)])
PAULIS.setflags(write=False)

# Choi basis element for PTM entry (i, j): P_j^T ⊗ P_i.
_CHOI_BASIS = np.einsum("jab,icd->ijacbd", PAULIS.transpose(0, 2, 1), PAULIS).reshape(
    NPAULI, NPAULI, DIM * DIM, DIM * DIM
)


class ChannelError(ValueError):
    """Raised when an input is not a valid channel or the requested quantity does not exist."""


class LogarithmBranchError(ChannelError):
    """The principal matrix logarithm is undefined (eigenvalue on the negative real axis)."""


class DiamondConvergenceError(RuntimeError):
    def __init__(self, lower: float, upper: float, iterations: int):
        super().__init__(
            f"diamond-norm iteration did not converge after {iterations} iterations; "
            f"value bracketed in [{lower:.8g}, {upper:.8g}]"
        )
        self.lower = lower
        self.upper = upper
        self.iterations = iterations


# ---------------------------------------------------------------------------
# states
# ---------------------------------------------------------------------------

def ket(index: int) -> np.ndarray:
    v = np.zeros(DIM, dtype=complex)
    v[index] = 1.0
    return v


def density_matrix(state: np.ndarray) -> np.ndarray:
    """Density matrix of a normalised pure state."""
    state = np.asarray(state, dtype=complex)
    if abs(np.vdot(state, state).real - 1.0) > 1e-12:
        raise ChannelError("pure state is not normalised")
    return np.outer(state, state.conj())


def state_to_vector(rho: np.ndarray) -> np.ndarray:
    """Pauli coordinates ``r_i = Tr(P_i ρ)``."""
    return np.real(np.einsum("iab,ba->i", PAULIS, rho))


def vector_to_state(r: np.ndarray) -> np.ndarray:
    return np.einsum("i,iab->ab", np.asarray(r, dtype=float), PAULIS) / DIM


def is_density_matrix(rho: np.ndarray, atol: float = 1e-10) -> bool:
    rho = np.asarray(rho)
    if not np.allclose(rho, rho.conj().T, atol=1e-12):
        return False
    if abs(np.trace(rho).real - 1.0) > 1e-12:
        return False
    return bool(np.linalg.eigvalsh(rho)[0] >= -atol)


# ---------------------------------------------------------------------------
# representations
# ---------------------------------------------------------------------------

def is_unitary(u: np.ndarray, atol: float = 1e-10) -> bool:
    u = np.asarray(u)
    return u.shape == (DIM, DIM) and np.allclose(u @ u.conj().T, np.eye(DIM), atol=atol)


def ptm_from_unitary(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=complex)
    if not is_unitary(u):
        raise ChannelError("ptm_from_unitary requires a 4x4 unitary")
    conj = np.einsum("ab,jbc,cd->jad", u, PAULIS, u.conj().T)
    return np.real(np.einsum("iab,jba->ij", PAULIS, conj)) / DIM


def ptm_from_kraus(kraus) -> np.ndarray:
    out = np.zeros((NPAULI, NPAULI))
    for k in kraus:
        k = np.asarray(k, dtype=complex)
        conj = np.einsum("ab,jbc,cd->jad", k, PAULIS, k.conj().T)
        out += np.real(np.einsum("iab,jba->ij", PAULIS, conj))
    return out / DIM


def ptm_to_choi(ptm: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ijab->ab", np.asarray(ptm, dtype=float), _CHOI_BASIS) / NPAULI


def choi_to_ptm(choi: np.ndarray) -> np.ndarray:
    return np.real(np.einsum("ijab,ba->ij", _CHOI_BASIS, choi))


def partial_trace_output(m: np.ndarray) -> np.ndarray:
    """Trace out the second (output) factor of a 16x16 operator."""
    return np.einsum("iaja->ij", m.reshape(DIM, DIM, DIM, DIM))


def is_tp(ptm: np.ndarray, atol: float = 1e-10) -> bool:
    first = np.zeros(NPAULI)
    first[0] = 1.0
    return bool(np.allclose(ptm[0], first, atol=atol))


def is_cp(ptm: np.ndarray, atol: float = 1e-10) -> bool:
    return bool(np.linalg.eigvalsh(ptm_to_choi(ptm))[0] >= -atol)


def is_cptp(ptm: np.ndarray, atol: float = 1e-10) -> bool:
    return is_tp(ptm, atol) and is_cp(ptm, atol)


def choi_is_tp(choi: np.ndarray, atol: float = 1e-10) -> bool:
    return bool(np.allclose(partial_trace_output(choi), np.eye(DIM) / DIM, atol=atol))


def identity_ptm() -> np.ndarray:
    return np.eye(NPAULI)


def depolarizing_ptm(p: float) -> np.ndarray:
    """Replace the state by I/4 with probability ``p``."""
    return np.diag([1.0] + [1.0 - p] * (NPAULI - 1))


def depolarizing_from_infidelity(eps: float) -> np.ndarray:
    """Two-qubit depolarising channel with average gate infidelity ``eps``."""
    return depolarizing_ptm(eps * DIM / (DIM - 1))


def single_qubit_ptm(ptm_1q: np.ndarray, qubit: int) -> np.ndarray:
    """Embed a 4x4 single-qubit PTM on ``qubit`` (0 = Ca, 1 = Sr)."""
    if qubit == 0:
        return np.kron(ptm_1q, np.eye(4))
    return np.kron(np.eye(4), ptm_1q)


def dephasing_ptm_1q(p: float) -> np.ndarray:
    """Single-qubit Z-flip with probability ``p``."""
    return np.diag([1.0, 1.0 - 2 * p, 1.0 - 2 * p, 1.0])


def depolarizing_ptm_1q(p: float) -> np.ndarray:
    return np.diag([1.0, 1.0 - p, 1.0 - p, 1.0 - p])


# ---------------------------------------------------------------------------
# algebra
# ---------------------------------------------------------------------------

def compose(*ptms: np.ndarray) -> np.ndarray:
    """``compose(a, b)`` is ``a`` applied after ``b``."""
    out = np.eye(NPAULI)
    for m in ptms:
        out = out @ m
    return out


def apply(ptm: np.ndarray, rho: np.ndarray) -> np.ndarray:
    return vector_to_state(ptm @ state_to_vector(rho))


def process_fidelity(g: np.ndarray, g0: np.ndarray) -> float:
    return float(np.trace(g0.T @ g) / NPAULI)


def fidelities(g: np.ndarray, g0: np.ndarray) -> tuple[float, float]:
    """Process and average gate fidelity of ``g`` against the unitary channel ``g0``."""
    g0 = np.asarray(g0, dtype=float)
    if not (np.allclose(g0 @ g0.T, np.eye(NPAULI), atol=1e-9) and is_tp(g0, 1e-9)):
        raise ChannelError("reference channel is not unitary")
    f_pro = process_fidelity(g, g0)
    return f_pro, (DIM * f_pro + 1) / (DIM + 1)


def average_infidelity(g: np.ndarray, g0: np.ndarray) -> float:
    return 1.0 - fidelities(g, g0)[1]


def error_generator(g: np.ndarray, g0: np.ndarray) -> np.ndarray:
    """Real generator ``L`` with ``g = expm(L) @ g0`` (principal logarithm).

    Raises :class:`LogarithmBranchError` when ``g @ inv(g0)`` has an
    eigenvalue on or next to the closed negative real axis.
    """
    m = np.asarray(g, dtype=float) @ np.linalg.inv(np.asarray(g0, dtype=float))
    evals = np.linalg.eigvals(m)
    scale = max(1.0, float(np.max(np.abs(evals))))
    bad = (np.real(evals) <= 0) & (np.abs(np.imag(evals)) <= 1e-9 * scale)
    if np.any(bad):
        raise LogarithmBranchError(
            f"principal logarithm undefined: eigenvalues {evals[bad]} on the branch cut"
        )
    gen = scipy.linalg.logm(m)
    if np.max(np.abs(np.imag(gen))) > 1e-8:
        raise LogarithmBranchError("matrix logarithm is not real")
    return np.real(gen)


def hamiltonian_generators() -> np.ndarray:
    """PTMs of ``ρ ↦ -i[P_k, ρ]/2`` for the 15 non-identity Paulis."""
    out = []
    for p in PAULIS[1:]:
        conj = -0.5j * (np.einsum("ab,jbc->jac", p, PAULIS) - np.einsum("jab,bc->jac", PAULIS, p))
        out.append(np.real(np.einsum("iab,jba->ij", PAULIS, conj)) / DIM)
    return np.array(out)


_HAM = hamiltonian_generators()


def split_generator(gen: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split an error generator into Hamiltonian and remaining (stochastic) parts.

    The Hamiltonian part is the orthogonal (Frobenius) projection onto the
    span of the 15 commutator generators; these have pairwise disjoint
    support, so each coefficient is a single inner product.  Returns
    ``(hamiltonian_part, stochastic_part, coefficients)`` where
    ``coefficients[k]`` multiplies the Pauli ``PAULI_LABELS[k + 1]``.
    """
    gen = np.asarray(gen, dtype=float)
    coeffs = np.einsum("kij,ij->k", _HAM, gen) / np.einsum("kij,kij->k", _HAM, _HAM)
    ham = np.einsum("k,kij->ij", coeffs, _HAM)
    return ham, gen - ham, coeffs


def coherent_fraction(gen: np.ndarray) -> float:
    """Share of ``||L||_F^2`` carried by the Hamiltonian block."""
    ham, _, _ = split_generator(gen)
    total = float(np.sum(np.asarray(gen) ** 2))
    if total == 0.0:
        return 0.0
    return float(np.sum(ham**2)) / total


# ---------------------------------------------------------------------------
# diamond distance
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiamondResult:
    value: float
    lower: float
    upper: float
    iterations: int


def _psd_part(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(m)
    return (v * np.clip(w, 0.0, None)) @ v.conj().T


def _hermitian_power(m: np.ndarray, power: float) -> np.ndarray:
    w, v = np.linalg.eigh(m)
    w = np.clip(w, 0.0, None)
    with np.errstate(divide="ignore"):
        wp = np.where(w > 0, w**power, 0.0)
    return (v * wp) @ v.conj().T


def _primal_value(j: np.ndarray, rho: np.ndarray) -> float:
    # Exact inner optimum for a fixed input marginal: Tr[(√ρ⊗I) J (√ρ⊗I)]_+.
    s = np.kron(_hermitian_power(rho, 0.5), np.eye(DIM))
    return float(np.sum(np.clip(np.linalg.eigvalsh(s @ j @ s), 0.0, None)))


def _dual_value(j: np.ndarray, y: np.ndarray) -> float:
    # Repair any Hermitian Y into a feasible point of  Y ≥ J, Y ≥ -J.
    y = (y + y.conj().T) / 2
    y = y + _psd_part(j - y)
    y = y + _psd_part(-j - y)
    return float(np.linalg.eigvalsh(partial_trace_output(y))[-1]) / 2


def diamond_bounds(
    g: np.ndarray,
    g0: np.ndarray,
    tol: float = 1e-5,
    max_iter: int = 20000,
    check_every: int = 10,
) -> DiamondResult:
    """Half diamond-norm distance with certified lower and upper bounds.

    Solves ``min λ_max(Tr_out Y)  s.t.  Y ≥ ±J`` (J the unnormalised Choi
    matrix of ``g - g0``) by ADMM.  Every ``check_every`` iterations the
    dual iterate is repaired into a feasible point (upper bound) and the
    multiplier of the ``t·I ≥ Tr_out Y`` block is read as an input state
    whose exact inner value gives a lower bound.
    """
    g = np.asarray(g, dtype=float)
    g0 = np.asarray(g0, dtype=float)
    if not (is_tp(g, 1e-8) and is_tp(g0, 1e-8)):
        raise ChannelError("diamond distance requires trace-preserving channels")
    j = DIM * (ptm_to_choi(g) - ptm_to_choi(g0))
    j = (j + j.conj().T) / 2
    jnorm = float(np.max(np.abs(np.linalg.eigvalsh(j))))
    if jnorm < 1e-14:
        return DiamondResult(0.0, 0.0, 0.0, 0)

    eye4 = np.eye(DIM)
    beta = 1.0 / jnorm
    y = jnorm * np.eye(DIM * DIM, dtype=complex)
    s1 = np.zeros_like(y)
    s2 = np.zeros_like(y)
    s3 = np.zeros((DIM, DIM), dtype=complex)
    l1 = np.zeros_like(y)
    l2 = np.zeros_like(y)
    l3 = np.zeros_like(s3)
    lower = _primal_value(j, eye4 / DIM)
    upper = _dual_value(j, y)
    it = 0
    for it in range(1, max_iter + 1):
        b1 = j + s1 - l1 / beta
        b2 = -j + s2 - l2 / beta
        b3 = s3 - l3 / beta
        t = (np.trace(b1 + b2).real + 2 * np.trace(b3).real - 6 / beta) / 8
        ymarg = (partial_trace_output(b1 + b2) + 4 * (t * eye4 - b3)) / 6
        y = (b1 + b2 + np.kron(t * eye4 - b3 - ymarg, eye4)) / 2
        a1 = y - j
        a2 = y + j
        a3 = t * eye4 - partial_trace_output(y)
        s1 = _psd_part(a1 + l1 / beta)
        s2 = _psd_part(a2 + l2 / beta)
        s3 = _psd_part(a3 + l3 / beta)
        l1 += beta * (a1 - s1)
        l2 += beta * (a2 - s2)
        l3 += beta * (a3 - s3)
        if it % check_every == 0:
            rho = _psd_part(-l3)
            tr = np.trace(rho).real
            if tr > 1e-300:
                lower = max(lower, _primal_value(j, rho / tr))
            upper = min(upper, _dual_value(j, y))
            if upper - lower < tol:
                break
    if upper - lower >= tol:
        raise DiamondConvergenceError(lower, upper, it)
    return DiamondResult((lower + upper) / 2, lower, upper, it)


def diamond_distance(g: np.ndarray, g0: np.ndarray, tol: float = 1e-5, max_iter: int = 20000) -> float:
    """``||g - g0||_⋄ / 2``."""
    return diamond_bounds(g, g0, tol=tol, max_iter=max_iter).value


# ---------------------------------------------------------------------------
# CPTP projection
# ---------------------------------------------------------------------------

def _tp_project_choi(choi: np.ndarray) -> np.ndarray:
    marg = partial_trace_output(choi)
    return choi - np.kron(marg - np.eye(DIM) / DIM, np.eye(DIM) / DIM)


def project_cptp(ptm: np.ndarray, tol: float = 1e-10, max_iter: int = 10000) -> np.ndarray:
    """Alternate PSD clipping and the TP affine projection of the Choi matrix."""
    ptm = np.asarray(ptm, dtype=float)
    choi = ptm_to_choi(ptm)
    choi = (choi + choi.conj().T) / 2
    choi = _tp_project_choi(choi)
    for _ in range(max_iter):
        if np.linalg.eigvalsh(choi)[0] >= -tol:
            break
        choi = _tp_project_choi(_psd_part(choi))
    return choi_to_ptm(choi)
