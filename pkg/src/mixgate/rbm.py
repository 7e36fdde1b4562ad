"""Interleaved two-qubit randomized benchmarking.

Reference and interleaved sequences are generated as twins that share
their random Cliffords and final Pauli frame.  Decays are fitted with
``F(L) = A p^L + B``; the error per Clifford is ``(3/4)(1 - p)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math
import warnings

import numpy as np
from scipy.optimize import curve_fit

from . import circuits, clifford
from .circuits import Op

DEFAULT_LENGTHS = (1, 2, 4, 6, 8, 10, 15, 20, 25, 30, 40, 50, 60)
ENTANGLER = Op("Gzz", 0)


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class RbmDesign:
    lengths: tuple[int, ...] = DEFAULT_LENGTHS
    randomizations: int = 100
    shots: int = 100
    interleaved: bool = True  # also emit the interleaved twin of every sequence

    def __post_init__(self):
        if not self.lengths or min(self.lengths) < 1:
            raise ValueError("lengths must be positive")
        if self.randomizations < 1 or self.shots < 1:
            raise ValueError("randomizations and shots must be positive")


@dataclass(frozen=True)
class RbmSequence:
    length: int
    index: int
    interleaved: bool
    cliffords: tuple[int, ...]
    inverse: int
    frame: tuple[str, str]
    expected: int  # basis-state index 2·q1 + q2

    def blocks(self) -> list:
        out: list = []
        for c in self.cliffords:
            out.append(clifford.TwoQubitClifford(c))
            if self.interleaved:
                out.append(ENTANGLER)
        out.append(clifford.TwoQubitClifford(self.inverse))
        out.extend(clifford.pauli_frame_ops(self.frame))
        return out

    def ops(self) -> tuple[Op, ...]:
        out: list[Op] = []
        for b in self.blocks():
            if isinstance(b, clifford.TwoQubitClifford):
                out.extend(clifford.decompose(b).ops)
            else:
                out.append(b)
        return tuple(out)

    def text(self) -> str:
        return circuits.serialize_circuit(self.ops())


def _entangler_element() -> clifford.TwoQubitClifford:
    return clifford.from_circuit((ENTANGLER,))


def _make_sequence(length, index, interleaved, cliffords, frame) -> RbmSequence:
    g = _entangler_element()
    total = clifford.identity()
    for c in cliffords:
        total = clifford.compose(clifford.TwoQubitClifford(c), total)
        if interleaved:
            total = clifford.compose(g, total)
    inverse = clifford.invert(total)
    return RbmSequence(length, index, interleaved, tuple(cliffords), inverse.index, frame,
                       clifford.frame_flips(frame))


def generate(design: RbmDesign, rng: np.random.Generator) -> list[RbmSequence]:
    """Reference sequences, each followed by its interleaved twin when enabled."""
    out = []
    for length in design.lengths:
        for k in range(design.randomizations):
            draws = tuple(int(x) for x in rng.integers(clifford.GROUP_ORDER, size=length))
            frame = clifford.random_pauli(rng)
            out.append(_make_sequence(length, k, False, draws, frame))
            if design.interleaved:
                out.append(_make_sequence(length, k, True, draws, frame))
    return out


# ---------------------------------------------------------------------------
# data reduction
# ---------------------------------------------------------------------------

@dataclass
class SurvivalData:
    """Per-sequence success fractions, keyed by (interleaved, length)."""

    shots: int
    values: dict[tuple[bool, int], list[float]] = field(default_factory=dict)

    def add(self, seq: RbmSequence, counts) -> None:
        counts = np.asarray(counts)
        self.values.setdefault((seq.interleaved, seq.length), []).append(
            float(counts[seq.expected]) / float(counts.sum()))

    def series(self, interleaved: bool, max_length: int | None = None):
        """(lengths, mean fidelity, standard error of the mean)."""
        keys = sorted(L for (flag, L) in self.values if flag == interleaved
                      and (max_length is None or L <= max_length))
        means, sems = [], []
        for L in keys:
            v = np.array(self.values[(interleaved, L)])
            means.append(v.mean())
            sems.append(v.std(ddof=1) / math.sqrt(len(v)) if len(v) > 1 else float("nan"))
        return np.array(keys), np.array(means), np.array(sems)

    def dispersion(self, interleaved: bool) -> float:
        """Observed over binomial variance of per-sequence fidelities (pooled, at least 1)."""
        num = den = 0.0
        for (flag, L), v in self.values.items():
            v = np.array(v)
            if flag != interleaved or len(v) < 2:
                continue
            m = v.mean()
            num += v.var(ddof=1) * (len(v) - 1)
            den += m * (1 - m) / self.shots * (len(v) - 1)
        return max(1.0, num / den) if den > 0 else 1.0


def sequence_fidelity(data, sequences: list[RbmSequence], shots: int | None = None) -> SurvivalData:
    """Score a CountDataset (records aligned with ``sequences``) by exact outcome match."""
    records = data.records
    if len(records) != len(sequences):
        raise ValueError(f"dataset has {len(records)} records for {len(sequences)} sequences")
    missing = [i for i, (r, s) in enumerate(zip(records, sequences))
               if circuits.canonical(r.circuit) != s.text()]
    if missing:
        raise ValueError(f"records do not match the design at indices {missing[:10]}")
    out = SurvivalData(shots or records[0].shots if records else 0)
    for rec, seq in zip(records, sequences):
        out.add(seq, rec.counts)
    return out


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DecayFit:
    amplitude: float
    offset: float
    decay: float
    max_length: int
    weighted: bool
    sigma: float | None = None

    @property
    def error(self) -> float:
        return 0.75 * (1.0 - self.decay)

    def model(self, lengths) -> np.ndarray:
        return self.amplitude * self.decay ** np.asarray(lengths, dtype=float) + self.offset


def _decay_model(L, a, p, b):
    return a * p**L + b


def fit_decay(lengths, fidelities, sems=None, *, fixed_offset: float | None = None) -> DecayFit:
    """Least-squares fit of ``A p^L + B``; weighted when ``sems`` is given.

    ``B`` is bounded to [0.2, 0.3].  With ``fixed_offset`` two lengths
    suffice and the solution is algebraic.
    """
    L = np.asarray(lengths, dtype=float)
    F = np.asarray(fidelities, dtype=float)
    distinct = np.unique(L)
    if fixed_offset is not None and len(distinct) == 2 and len(L) == 2:
        y = F - fixed_offset
        if np.any(y <= 0):
            raise FitError("data at or below the offset; decay unidentifiable")
        p = (y[1] / y[0]) ** (1.0 / (L[1] - L[0]))
        a = y[0] / p ** L[0]
        return _checked(DecayFit(float(a), fixed_offset, float(p), int(L.max()), False))
    need = 2 if fixed_offset is not None else 3
    if len(distinct) < need:
        raise FitError(f"need at least {need} distinct lengths")
    if np.ptp(F) < 1e-9:
        raise FitError("flat data; decay parameter unidentifiable")
    sigma = None
    if sems is not None:
        sigma = np.asarray(sems, dtype=float)
        if np.any(~np.isfinite(sigma)) or np.any(sigma <= 0):
            sigma = np.where(np.isfinite(sigma) & (sigma > 0), sigma, np.nanmax(sigma[sigma > 0])
                             if np.any(sigma > 0) else 1.0)
    if fixed_offset is None:
        f = _decay_model
        p0 = (max(F[0] - 0.25, 1e-3), 0.98, 0.25)
        bounds = ([0.0, 0.0, 0.2], [1.0, 1.0, 0.3])
    else:
        def f(L, a, p):
            return a * p**L + fixed_offset
        p0 = (max(F[0] - fixed_offset, 1e-3), 0.98)
        bounds = ([0.0, 0.0], [1.0, 1.0])
    try:
        popt, _ = curve_fit(f, L, F, p0=p0, sigma=sigma, absolute_sigma=sigma is not None,
                            bounds=bounds, maxfev=20000)
    except (RuntimeError, ValueError) as exc:
        raise FitError(f"decay fit did not converge: {exc}") from None
    a, p = popt[0], popt[1]
    b = popt[2] if fixed_offset is None else fixed_offset
    return _checked(DecayFit(float(a), float(b), float(p), int(L.max()), sigma is not None))


def _checked(fit: DecayFit) -> DecayFit:
    if not 0.0 < fit.decay <= 1.0 or not math.isfinite(fit.decay):
        raise FitError(f"decay parameter {fit.decay} outside (0, 1]")
    if fit.amplitude < 1e-3:
        raise FitError("vanishing decay amplitude; p unidentifiable")
    return fit


def depolarizing_weight(n: int = 2) -> float:
    return 2**n / (2**n - 1)


def interleaved_error(eps_ref: float, eps_int: float, n: int = 2) -> float:
    """Error of the interleaved gate from reference and interleaved errors per Clifford."""
    alpha = depolarizing_weight(n)
    limit = 1 / alpha
    for e in (eps_ref, eps_int):
        if not 0 <= e < limit:
            raise ValueError(f"error {e} outside [0, {limit})")
    denom = 1 - alpha * eps_ref
    return (1 - (1 - alpha * eps_int) / denom) / alpha


def compose_errors(eps_ref: float, eps_gate: float, n: int = 2) -> float:
    """Interleaved error per Clifford from independent depolarising parts."""
    alpha = depolarizing_weight(n)
    return (1 - (1 - alpha * eps_ref) * (1 - alpha * eps_gate)) / alpha


# ---------------------------------------------------------------------------
# analysis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InterleavedResult:
    reference: DecayFit
    interleaved: DecayFit
    gate_error: float
    sigma_reference: float | None = None
    sigma_interleaved: float | None = None
    sigma_gate: float | None = None
    failed_resamples: int = 0


def _fit_series(lengths, means, totals, dispersion, weighted: bool) -> DecayFit:
    """Unweighted fit, then (optionally) one refit weighted by the model's binomial variance.

    Weights from the model rather than from per-length sample variances
    avoid the downward bias that data-derived weights induce.
    """
    fit = fit_decay(lengths, means)
    if not weighted:
        return fit
    sems = _model_sems(fit, lengths, totals, dispersion)
    return fit_decay(lengths, means, sems)


def _model_sems(fit: DecayFit, lengths, totals, dispersion) -> np.ndarray:
    p = np.clip(fit.model(lengths), 1e-6, 1 - 1e-6)
    return np.sqrt(dispersion * p * (1 - p) / totals)


def fit_joint(ref_series, int_series, sems=None) -> tuple[DecayFit, DecayFit]:
    """Reference and interleaved decays with separate A, p and one shared offset B.

    Both sequence families share preparation and measurement, so their
    asymptote is common; sharing it removes most of the A-B-p correlation
    that otherwise biases short-length fits.
    """
    (L0, m0), (L1, m1) = ref_series, int_series
    for L in (L0, L1):
        if len(np.unique(L)) < 3:
            raise FitError("need at least 3 distinct lengths")
    if np.ptp(m0) < 1e-9 or np.ptp(m1) < 1e-9:
        raise FitError("flat data; decay parameter unidentifiable")
    L = np.concatenate([L0, L1]).astype(float)
    y = np.concatenate([m0, m1])
    is_int = np.r_[np.zeros(len(L0), bool), np.ones(len(L1), bool)]

    def model(_, a0, a1, p0, p1, b):
        return np.where(is_int, a1 * p1**L, a0 * p0**L) + b

    sigma = None if sems is None else np.concatenate(sems)
    start = (max(m0[0] - 0.25, 1e-3), max(m1[0] - 0.25, 1e-3), 0.98, 0.98, 0.25)
    try:
        popt, _ = curve_fit(model, L, y, p0=start, sigma=sigma, absolute_sigma=sigma is not None,
                            bounds=([0, 0, 0, 0, 0.2], [1, 1, 1, 1, 0.3]), maxfev=20000)
    except (RuntimeError, ValueError) as exc:
        raise FitError(f"decay fit did not converge: {exc}") from None
    a0, a1, p0, p1, b = (float(v) for v in popt)
    w = sigma is not None
    return (_checked(DecayFit(a0, b, p0, int(L0.max()), w)), _checked(DecayFit(a1, b, p1, int(L1.max()), w)))


def _series_inputs(data: "SurvivalData", flag: bool, max_length):
    L, means, _ = data.series(flag, max_length)
    totals = np.array([len(data.values[(flag, x)]) for x in L]) * data.shots
    return L, means, totals, data.dispersion(flag)


def _fit_both(inputs, weighted: bool, shared_offset: bool) -> tuple[DecayFit, DecayFit]:
    if not shared_offset:
        return tuple(_fit_series(*inputs[flag], weighted) for flag in (False, True))
    series = [(inputs[f][0], inputs[f][1]) for f in (False, True)]
    ref, inter = fit_joint(*series)
    if weighted:
        sems = [_model_sems(fit, *inputs[f][0:1], *inputs[f][2:4]) for fit, f in ((ref, False), (inter, True))]
        ref, inter = fit_joint(*series, sems=sems)
    return ref, inter


def fit_pair(data: SurvivalData, max_length: int | None = None, weighted: bool = False,
             shared_offset: bool = True) -> InterleavedResult:
    inputs = {flag: _series_inputs(data, flag, max_length) for flag in (False, True)}
    ref, inter = _fit_both(inputs, weighted, shared_offset)
    return InterleavedResult(ref, inter, interleaved_error(ref.error, inter.error))


def _resample_means(fit: DecayFit, lengths, counts_per_length, dispersion, rng):
    p = np.clip(fit.model(lengths), 0.0, 1.0)
    draws = rng.binomial(counts_per_length, p) / counts_per_length
    return p + math.sqrt(dispersion) * (draws - p)


def bootstrap(result: InterleavedResult, data: SurvivalData, rng: np.random.Generator,
              resamples: int = 200, max_length: int | None = None, weighted: bool = False,
              shared_offset: bool = True) -> InterleavedResult:
    """Parametric bootstrap of both decays and of the gate error.

    Mean fidelities are redrawn as binomial totals over all shots at each
    length from the fitted models, inflated by any excess randomization
    variance seen in the data, and refitted the same way as the data.
    """
    if resamples < 2:
        warnings.warn("fewer than two bootstrap resamples; reporting zero spread", stacklevel=2)
        return InterleavedResult(result.reference, result.interleaved, result.gate_error, 0.0, 0.0, 0.0, 0)
    inputs = {flag: _series_inputs(data, flag, max_length) for flag in (False, True)}
    fits = {False: result.reference, True: result.interleaved}
    eps = {False: [], True: []}
    gate = []
    failed = 0
    for _ in range(resamples):
        fake = {}
        for flag in (False, True):
            L, _, totals, disp = inputs[flag]
            fake[flag] = (L, _resample_means(fits[flag], L, totals, disp, rng), totals, disp)
        try:
            ref, inter = _fit_both(fake, weighted, shared_offset)
            g = interleaved_error(ref.error, inter.error)
        except (FitError, ValueError):
            failed += 1
            continue
        eps[False].append(ref.error)
        eps[True].append(inter.error)
        gate.append(g)
    if len(gate) < 2:
        raise FitError("bootstrap failed on almost every resample")
    return InterleavedResult(result.reference, result.interleaved, result.gate_error,
                             float(np.std(eps[False], ddof=1)), float(np.std(eps[True], ddof=1)),
                             float(np.std(gate, ddof=1)), failed)


def error_vs_maxlen(data: SurvivalData, max_lengths, rng: np.random.Generator | None = None,
                    resamples: int = 100, weighted: bool = False, shared_offset: bool = True):
    """Gate error refitted with only L ≤ L_max; rows are (L_max, ε_G, σ)."""
    rows = []
    for lmax in max_lengths:
        res = fit_pair(data, lmax, weighted, shared_offset)
        sigma = float("nan")
        if rng is not None:
            sigma = bootstrap(res, data, rng, resamples, lmax, weighted, shared_offset).sigma_gate
        rows.append((int(lmax), res.gate_error, sigma))
    return rows


def simulate(backend, sequences: list[RbmSequence], shots: int) -> SurvivalData:
    """Run sequences on a SimBackend directly (no dataset round trip)."""
    data = SurvivalData(shots)
    for i, seq in enumerate(sequences):
        data.add(seq, backend.simulate_shots(seq.blocks(), shots, i, text=seq.text()))
    return data


def run_dataset(backend, sequences: list[RbmSequence], shots: int, metadata=None):
    from . import dataset

    records = []
    for i, seq in enumerate(sequences):
        text = seq.text()
        counts = backend.simulate_shots(seq.blocks(), shots, i, text=text)
        records.append(dataset.CountRecord(text, tuple(int(c) for c in counts)))
    meta = {"seed": str(backend.config.seed), "backend": backend.config.describe(),
            "timestamp": dataset.timestamp(), "experiment": "rbm"}
    meta.update(metadata or {})
    return dataset.CountDataset(records, meta)
