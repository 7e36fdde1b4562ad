"""Partial Bell-state tomography with readout correction.

The sequence is π/2 (both qubits), the entangling gate, π/2 (both qubits),
optionally followed by an analysis π/2 pulse of phase φ on each qubit.
Parity of a Bell-type state depends only on the summed analysis phase, so
equal phases φ on both qubits are realised as ``2φ`` on Ca and 0 on Sr;
that keeps every analysis pulse on the ±X/±Y grid.  The offset between
analysis phase and Bell phase is fixed by simulating the ideal sequence.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from functools import lru_cache
import math

import numpy as np

from . import backend as bk
from . import circuits

PREP = "Gyp:1 Gyp:2"
GATE = "Gzz"
POPULATION_CIRCUIT = f"{PREP} {GATE} {PREP}"
CALIBRATION_CIRCUITS = ("{}", "Gpi:2", "Gpi:1", "Gpi:1 Gpi:2")  # |⇓↓>, |⇓↑>, |⇑↓>, |⇑↑>
ANALYSIS_PHASES = (45, 135)
_AXIS = {0: "Gxp", 90: "Gyp", 180: "Gxm", 270: "Gym"}


def parity(populations) -> float:
    p = np.asarray(populations, dtype=float)
    if abs(p.sum() - 1) > 1e-6:
        raise ValueError("populations do not sum to 1")
    return float(p[0] + p[3] - p[1] - p[2])


def bell_fidelity(p_even: float, parity45: float, parity135: float) -> tuple[float, bool]:
    """(fidelity, clipped flag) from even population and the two parities."""
    f = 0.5 * p_even + 0.25 * (parity45 - parity135)
    clipped = not 0.0 <= f <= 1.0
    return min(max(f, 0.0), 1.0), clipped


def _analysis_text(phi: int, offset: int) -> str:
    total = (2 * (phi + offset)) % 360
    return f"{_AXIS[total]}:1 Gxp:2"


@lru_cache(maxsize=None)
def analysis_offset() -> int:
    """Analysis-phase offset (degrees) maximising the ideal parity contrast."""
    ideal = bk.SimBackend(bk.SimBackendConfig())
    best, best_c = 0, -np.inf
    for offset in (0, 45, 90, 135):
        pi = [parity(ideal.probabilities(circuits.parse_circuit(
            f"{POPULATION_CIRCUIT} {_analysis_text(phi, offset)}"))) for phi in ANALYSIS_PHASES]
        if pi[0] - pi[1] > best_c + 1e-9:
            best, best_c = offset, pi[0] - pi[1]
    return best


def pst_circuits() -> dict[str, str]:
    off = analysis_offset()
    out = {"population": POPULATION_CIRCUIT}
    for phi in ANALYSIS_PHASES:
        out[f"parity{phi}"] = f"{POPULATION_CIRCUIT} {_analysis_text(phi, off)}"
    return out


# ---------------------------------------------------------------------------
# readout calibration and correction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpamCalibration:
    eps_ca: float
    eps_sr: float
    shots_per_state: float  # math.inf for an exactly known calibration

    @property
    def confusion(self) -> np.ndarray:
        return bk.confusion_matrix(self.eps_ca, self.eps_sr)

    def __post_init__(self):
        if np.min(np.diag(self.confusion)) < 0.9:
            raise ValueError("calibration implies readout fidelity below 0.9")

    @classmethod
    def from_counts(cls, counts) -> "SpamCalibration":
        """Per-species mean flip rates from the four prepare-and-measure circuits."""
        counts = np.asarray(counts, dtype=float)
        n = counts.sum(axis=1)
        if np.any(n <= 0):
            raise ValueError("calibration circuit without shots")
        flips_ca = flips_sr = 0.0
        for prepared, row in enumerate(counts):
            for observed, c in enumerate(row):
                flips_ca += c * ((prepared >> 1) != (observed >> 1))
                flips_sr += c * ((prepared & 1) != (observed & 1))
        total = n.sum()
        return cls(flips_ca / total, flips_sr / total, float(np.mean(n)))

    def variances(self) -> tuple[float, float]:
        n = 4 * self.shots_per_state
        if math.isinf(n):
            return 0.0, 0.0
        return self.eps_ca * (1 - self.eps_ca) / n, self.eps_sr * (1 - self.eps_sr) / n


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.nonzero(u - css / np.arange(1, len(v) + 1) > 0)[0][-1]
    return np.maximum(v - css[k] / (k + 1), 0.0)


def spam_correct(raw, confusion: np.ndarray) -> tuple[np.ndarray, bool]:
    """(corrected populations, projection-engaged flag)."""
    confusion = np.asarray(confusion, dtype=float)
    if np.linalg.cond(confusion) >= 100:
        raise ValueError("calibration confusion matrix is ill-conditioned")
    x = np.linalg.solve(confusion, np.asarray(raw, dtype=float))
    if np.all(x >= 0):
        return x / x.sum(), False
    return project_simplex(x), True


# ---------------------------------------------------------------------------
# analysis
# ---------------------------------------------------------------------------

@dataclass
class PstResult:
    raw_populations: list[float]
    raw_parity45: float
    raw_parity135: float
    raw_fidelity: float
    corrected_populations: list[float]
    parity45: float
    parity135: float
    fidelity: float
    sigma_raw: float = 0.0
    sigma_statistical: float = 0.0
    sigma_calibration: float = 0.0
    sigma: float = 0.0
    clipped: bool = False
    projected: bool = False
    shots: int = 0
    calibration: dict = field(default_factory=dict)
    note: str = "analysis and echo pulse errors are attributed to the gate"

    @property
    def raw_error(self) -> float:
        return 1.0 - self.raw_fidelity

    @property
    def error(self) -> float:
        return 1.0 - self.fidelity

    def to_dict(self) -> dict:
        d = asdict(self)
        d["raw_error"] = self.raw_error
        d["error"] = self.error
        return d


def _fidelity_from_freqs(freqs: np.ndarray, eps_ca: float, eps_sr: float, correct: bool):
    projected = False
    pops = []
    for f in freqs:
        if correct:
            f, flag = spam_correct(f, bk.confusion_matrix(eps_ca, eps_sr))
            projected |= flag
        pops.append(f)
    p_even = pops[0][0] + pops[0][3]
    p45, p135 = parity(pops[1]), parity(pops[2])
    fid, clipped = bell_fidelity(p_even, p45, p135)
    return fid, pops, p45, p135, clipped, projected


def analyse(counts: dict[str, np.ndarray], calibration: SpamCalibration) -> PstResult:
    """Assemble raw and corrected fidelities with linearised uncertainties.

    ``counts`` maps 'population', 'parity45', 'parity135' to 4-outcome counts.
    """
    order = ("population", "parity45", "parity135")
    cts = np.array([np.asarray(counts[k], dtype=float) for k in order])
    n = cts.sum(axis=1)
    if np.any(n <= 0):
        raise ValueError("PST circuit without shots")
    freqs = cts / n[:, None]
    ca, sr = calibration.eps_ca, calibration.eps_sr
    raw_f, raw_pops, r45, r135, _, _ = _fidelity_from_freqs(freqs, ca, sr, False)
    fid, pops, c45, c135, clipped, projected = _fidelity_from_freqs(freqs, ca, sr, True)

    def grad(fun, x, h):
        g = np.zeros_like(x)
        for i in range(len(x)):
            xp, xm = x.copy(), x.copy()
            xp[i] += h
            xm[i] -= h
            g[i] = (fun(xp) - fun(xm)) / (2 * h)
        return g

    def stat_var(correct):
        var = 0.0
        for c in range(3):
            def f(p, c=c):
                fr = freqs.copy()
                fr[c] = p
                return _fidelity_from_freqs(fr, ca, sr, correct)[0]
            g = grad(f, freqs[c].copy(), 1e-7)
            cov = (np.diag(freqs[c]) - np.outer(freqs[c], freqs[c])) / n[c]
            var += g @ cov @ g
        return max(var, 0.0)

    def cal_fid(e):
        return _fidelity_from_freqs(freqs, e[0], e[1], True)[0]

    g_cal = grad(cal_fid, np.array([ca, sr]), 1e-7)
    v_ca, v_sr = calibration.variances()
    var_cal = g_cal[0] ** 2 * v_ca + g_cal[1] ** 2 * v_sr
    var_stat = stat_var(True)
    return PstResult(
        raw_populations=[float(x) for x in raw_pops[0]],
        raw_parity45=r45, raw_parity135=r135, raw_fidelity=float(raw_f),
        corrected_populations=[float(x) for x in pops[0]],
        parity45=c45, parity135=c135, fidelity=float(fid),
        sigma_raw=float(math.sqrt(stat_var(False))),
        sigma_statistical=float(math.sqrt(var_stat)),
        sigma_calibration=float(math.sqrt(var_cal)),
        sigma=float(math.sqrt(var_stat + var_cal)),
        clipped=clipped, projected=projected, shots=int(n.min()),
        calibration={"eps_ca": ca, "eps_sr": sr, "shots_per_state": calibration.shots_per_state},
    )


def run_pst(backend: bk.SimBackend, shots: int, calibration_shots: int = 10_000):
    """Execute gate and calibration circuits; returns (result, dataset)."""
    from . import dataset

    if shots <= 0 or calibration_shots <= 0:
        raise ValueError("shot counts must be positive")
    texts = list(pst_circuits().values()) + list(CALIBRATION_CIRCUITS)
    n_shots = [shots] * 3 + [calibration_shots] * 4
    records = []
    for i, (text, n) in enumerate(zip(texts, n_shots)):
        canon = circuits.canonical(text)
        counts = backend.simulate_shots(circuits.parse_circuit(canon), n, i, canon)
        records.append(dataset.CountRecord(canon, tuple(int(c) for c in counts)))
    meta = {"seed": str(backend.config.seed), "backend": backend.config.describe(),
            "timestamp": dataset.timestamp(), "experiment": "pst"}
    data = dataset.CountDataset(records, meta)
    return analyse_dataset(data), data


def analyse_dataset(data) -> PstResult:
    """Analyse a dataset holding the three PST and four calibration circuits."""
    by = data.by_circuit()
    names = pst_circuits()
    try:
        counts = {k: by[circuits.canonical(t)] for k, t in names.items()}
        cal = [by[circuits.canonical(t)] for t in CALIBRATION_CIRCUITS]
    except KeyError as exc:
        raise ValueError(f"dataset lacks PST circuit {exc}") from None
    return analyse(counts, SpamCalibration.from_counts(cal))
