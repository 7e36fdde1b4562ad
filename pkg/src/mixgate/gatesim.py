"""Model of the mixed-species σz⊗σz light-shift gate.

Each gate loop is a Hann-edged pulse: a rectangle of length ``1/|δ_g|``
convolved with a half-sine kernel of length ``t_s``.  Its rising edge is
``sin²(πt/2t_s)`` and its spectrum vanishes at ``δ_g``, so every loop closes
in phase space exactly, shaped or not.  A loop therefore lasts
``1/|δ_g| + t_s``; ``gate_time`` is the loop-closure time ``loops/|δ_g|`` and
``sequence_duration`` adds the edges.

A spin echo (π on both qubits, instantaneous) separates consecutive loops.
The drive phase of each loop is quoted in the echo's toggling frame: with
``walsh_flip`` the spin-dependent part of the force keeps its sign across
the echo, so a mis-set detuning leaves only a spin-independent residual
displacement.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import math

import numpy as np

from . import qcore

AMU = 1.66053906660e-27
ELEMENTARY_CHARGE = 1.602176634e-19
EPSILON0 = 8.8541878128e-12

SPIN_CONFIGS = ("dd", "du", "ud", "uu")  # ⇓↓, ⇓↑, ⇑↓, ⇑↑ ; 'd' is the |0> state
_Z1 = np.array([1.0, 1.0, -1.0, -1.0])
_Z2 = np.array([1.0, -1.0, 1.0, -1.0])
_FLIP = np.array([3, 2, 1, 0])  # index of the spin-flipped configuration

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(96)


# ---------------------------------------------------------------------------
# configuration types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IonSpecies:
    name: str
    mass: float  # amu
    raman_detuning: float  # Hz
    linewidth: float  # Hz
    qubit_frequency: float  # Hz
    eta_ip: float
    eta_oop: float
    lightshift_amp_up: float
    lightshift_amp_down: float

    def __post_init__(self):
        for eta in (self.eta_ip, self.eta_oop):
            if not 0.0 < eta < 1.0:
                raise ValueError(f"{self.name}: Lamb-Dicke parameter {eta} outside (0, 1)")
        if abs(self.raman_detuning) < 100 * self.linewidth:
            raise ValueError(f"{self.name}: Raman detuning not far from resonance")

    def eta(self, mode: "MotionalMode") -> float:
        if mode.label == "ax_ip":
            return self.eta_ip
        if mode.label == "ax_oop":
            return self.eta_oop
        raise ValueError(f"no Lamb-Dicke parameter for mode {mode.label!r}")

    def coefficient(self, spin: str) -> float:
        return self.lightshift_amp_down if spin == "d" else self.lightshift_amp_up


@dataclass(frozen=True)
class MotionalMode:
    label: str  # ax_ip, ax_oop, rad_ip, rad_oop
    frequency: float  # Hz
    nbar: float = 0.0
    heating_rate: float = 0.0  # quanta / s

    def __post_init__(self):
        if self.label not in ("ax_ip", "ax_oop", "rad_ip", "rad_oop"):
            raise ValueError(f"unknown mode label {self.label!r}")
        if self.frequency <= 0 or self.nbar < 0 or self.heating_rate < 0:
            raise ValueError(f"invalid mode parameters for {self.label}")


@dataclass(frozen=True)
class GateDriveConfig:
    mode: MotionalMode
    gate_detuning: float = -40e3  # Hz
    loops: int = 2
    shaping_time: float = 2e-6  # s
    walsh_flip: bool = True
    carrier_rabi: float = 180e3  # Hz
    ion_spacing_ratio: float = 12.5

    def __post_init__(self):
        if self.loops < 1:
            raise ValueError("at least one loop is required")
        if self.gate_detuning == 0:
            raise ValueError("gate detuning must be nonzero")
        if not 0 <= self.shaping_time < self.gate_time / 4:
            raise ValueError("shaping time must be below a quarter of the gate time")

    @property
    def loop_time(self) -> float:
        return 1.0 / abs(self.gate_detuning)

    @property
    def gate_time(self) -> float:
        return self.loops / abs(self.gate_detuning)

    @property
    def pulse_duration(self) -> float:
        return self.loop_time + self.shaping_time

    @property
    def sequence_duration(self) -> float:
        return self.loops * self.pulse_duration


@dataclass(frozen=True)
class SpinConfigForces:
    """Dimensionless drive strengths, ordered ⇓↓, ⇓↑, ⇑↓, ⇑↑."""

    values: tuple[float, float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    def array(self) -> np.ndarray:
        return np.array(self.values)

    def scaled(self, k: float) -> "SpinConfigForces":
        return SpinConfigForces(tuple(k * v for v in self.values))

    def __getitem__(self, key: str) -> float:
        return self.values[SPIN_CONFIGS.index(key)]


@dataclass(frozen=True)
class PhaseComponents:
    global_: float
    z1: float
    z2: float
    zz: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.global_, self.z1, self.z2, self.zz)

    def recompose(self) -> np.ndarray:
        return self.global_ + self.z1 * _Z1 + self.z2 * _Z2 + self.zz * _Z1 * _Z2


@dataclass(frozen=True)
class NoiseSpec:
    """Error channels attached to the entangling gate.

    Incoherent contributions (heating, scattering, Kerr, spectator modes,
    stray field) are lumped into one two-qubit depolarising channel with
    the same average infidelity.  ``single_qubit_error`` only enters the
    budget table; the echo pulses inside the gate are ideal.
    """

    depolarizing_p: float = 0.0
    dephasing_rates: tuple[float, float] = (0.0, 0.0)  # 1/s, (Ca, Sr)
    coherent_zz_offset: float = 0.0  # rad, extra exp(-i θ/2 Z⊗Z)
    include_heating: bool = False
    include_scattering: bool = False
    kerr_error: float = 0.0
    spectator_error: float = 0.0
    stray_field: float = 0.0  # V/m
    stray_coefficient: float = 7e-4 / 0.3**2  # error / (V/m)^2
    single_qubit_error: float = 0.0

    def __post_init__(self):
        if self.depolarizing_p < 0 or min(self.dephasing_rates) < 0:
            raise ValueError("noise rates must be nonnegative")
        if min(self.kerr_error, self.spectator_error, self.stray_coefficient, self.single_qubit_error) < 0:
            raise ValueError("error contributions must be nonnegative")

    @classmethod
    def none(cls) -> "NoiseSpec":
        return cls()

    @classmethod
    def measured_defaults(cls) -> "NoiseSpec":
        return cls(
            dephasing_rates=(2.0, 2.0),
            include_heating=True,
            include_scattering=True,
            kerr_error=2e-4,
            spectator_error=1e-4,
            stray_field=0.3,
            single_qubit_error=4.3e-4,
        )

    def is_zero(self) -> bool:
        return self == replace(NoiseSpec(), stray_coefficient=self.stray_coefficient)


# ---------------------------------------------------------------------------
# defaults
# ---------------------------------------------------------------------------

CA_MASS = 42.958766
SR_MASS = 87.905612
ETA_CA = (0.090, 0.127)  # (ip, oop)
ETA_SR = (0.124, 0.045)


def derive_lightshift_coefficients(
    eta_ca: float = ETA_CA[1],
    eta_sr: float = ETA_SR[1],
    zz_share: float = 0.8,
    rabi_scaling: float = 1.03,
) -> tuple[float, float, float, float]:
    """Per-state force coefficients ``(ca_up, ca_down, sr_up, sr_down)``.

    With ``f(s1, s2) = a0 + a1 z1 + b1 z2`` the echoed sequence gives a
    global phase ∝ ``a0² + a1² + b1²`` and a ZZ phase ∝ ``2 a1 b1``.  The
    Rabi-scaling target fixes the differential ratio ``r = |b1/a1|`` via
    ``(1 + r²)/(2r) = rabi_scaling²``; the ZZ share of the global phase then
    fixes the state-independent part ``a0``, which is put on the Ca+ qubit
    (the hyperfine qubit with unequal couplings of its two states).
    """
    s2 = rabi_scaling**2
    r = s2 - math.sqrt(s2 * s2 - 1.0)
    a0_sq = 2.0 * r / zz_share - 1.0 - r * r
    if a0_sq < 0:
        raise ValueError("targets imply a negative common-mode force")
    # b1 > 0 gives exp(-iπ/4 Z⊗Z) for a red-detuned (δ_g < 0) drive
    a1, b1, a0 = 1.0, r, math.sqrt(a0_sq)
    ca_down, ca_up = (a0 + a1) / eta_ca, (a0 - a1) / eta_ca
    sr_down, sr_up = b1 / eta_sr, -b1 / eta_sr
    norm = ca_down
    return (ca_up / norm, ca_down / norm, sr_up / norm, sr_down / norm)


_C = derive_lightshift_coefficients()

CALCIUM = IonSpecies(
    name="43Ca+", mass=CA_MASS, raman_detuning=-9.0e12, linewidth=22e6, qubit_frequency=2.874e9,
    eta_ip=ETA_CA[0], eta_oop=ETA_CA[1], lightshift_amp_up=_C[0], lightshift_amp_down=_C[1],
)
STRONTIUM = IonSpecies(
    name="88Sr+", mass=SR_MASS, raman_detuning=11.2e12, linewidth=22e6, qubit_frequency=409e6,
    eta_ip=ETA_SR[0], eta_oop=ETA_SR[1], lightshift_amp_up=_C[2], lightshift_amp_down=_C[3],
)


def axial_mode_frequencies(spacing: float, m1: float = CA_MASS, m2: float = SR_MASS) -> tuple[float, float]:
    """(ip, oop) axial frequencies in Hz of a two-ion crystal with the given spacing.

    The Coulomb balance fixes the trap curvature ``κ = e²/(2πε₀ d³)``; the
    normal modes of two unequal masses in the same curvature are
    ``ω² = ω₁² (1 + 1/μ ∓ sqrt(1 + 1/μ² - 1/μ))`` with ``ω₁² = κ/m₁``.
    """
    kappa = ELEMENTARY_CHARGE**2 / (2 * math.pi * EPSILON0 * spacing**3)
    w1 = math.sqrt(kappa / (m1 * AMU))
    mu = m2 / m1
    root = math.sqrt(1 + 1 / mu**2 - 1 / mu)
    w_ip = w1 * math.sqrt(1 + 1 / mu - root)
    w_oop = w1 * math.sqrt(1 + 1 / mu + root)
    return w_ip / (2 * math.pi), w_oop / (2 * math.pi)


_F_IP, _F_OOP = axial_mode_frequencies(3.57e-6)


def default_modes() -> dict[str, MotionalMode]:
    # Radial frequencies are placeholders; the text gives no values.
    return {
        "ax_ip": MotionalMode("ax_ip", _F_IP, nbar=0.05, heating_rate=110.0),
        "ax_oop": MotionalMode("ax_oop", _F_OOP, nbar=0.05, heating_rate=30.0),
        "rad_ip": MotionalMode("rad_ip", 3.5e6, nbar=10.0),
        "rad_oop": MotionalMode("rad_oop", 3.2e6, nbar=10.0),
    }


def default_config() -> GateDriveConfig:
    return GateDriveConfig(mode=default_modes()["ax_oop"])


# ---------------------------------------------------------------------------
# forces and phase-space trajectories
# ---------------------------------------------------------------------------

def force_amplitudes(ca: IonSpecies, sr: IonSpecies, mode: MotionalMode) -> SpinConfigForces:
    eta1, eta2 = ca.eta(mode), sr.eta(mode)
    return SpinConfigForces(
        tuple(eta1 * ca.coefficient(s[0]) + eta2 * sr.coefficient(s[1]) for s in SPIN_CONFIGS)
    )


def _loop_segments(config: GateDriveConfig, k: int, delta: float):
    """Exponential-sum description of ``w(t) e^{-iδt}`` on loop ``k``.

    Returns a list of ``(t0, t1, [(coef, kappa), ...])`` with the integrand
    ``Σ coef · e^{iκt}`` on ``[t0, t1]``.
    """
    start = k * config.pulse_duration
    ts = config.shaping_time
    tau = config.loop_time
    ref = np.exp(1j * delta * start)  # each loop's drive phase starts at zero
    if ts == 0:
        return [(start, start + tau, [(ref, -delta)])]
    w = math.pi / ts
    up_ref = start
    down_ref = start + tau
    return [
        (start, start + ts, [
            (0.5 * ref, -delta),
            (-0.25 * ref * np.exp(-1j * w * up_ref), -delta + w),
            (-0.25 * ref * np.exp(1j * w * up_ref), -delta - w),
        ]),
        (start + ts, start + tau, [(ref, -delta)]),
        (start + tau, start + tau + ts, [
            (0.5 * ref, -delta),
            (0.25 * ref * np.exp(-1j * w * down_ref), -delta + w),
            (0.25 * ref * np.exp(1j * w * down_ref), -delta - w),
        ]),
    ]


def _exp_integral(terms, a: float, b) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    out = np.zeros(b.shape, dtype=complex)
    for coef, kappa in terms:
        if abs(kappa) * max(abs(a), 1e-12) < 1e-12:
            out += coef * (b - a)
        else:
            out += coef * (np.exp(1j * kappa * b) - np.exp(1j * kappa * a)) / (1j * kappa)
    return out


def _exp_value(terms, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    out = np.zeros(t.shape, dtype=complex)
    for coef, kappa in terms:
        out += coef * np.exp(1j * kappa * t)
    return out


def _loop_integral(segments, t) -> np.ndarray:
    """``I(t) = ∫ w e^{-iδt'} dt'`` over the loop up to time ``t``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.zeros(t.shape, dtype=complex)
    for t0, t1, terms in segments:
        upper = np.clip(t, t0, t1)
        out += _exp_integral(terms, t0, upper)
    return out


def _loop_area(segments, t: float) -> float:
    """``Im ∫ I* I' dt`` over the loop up to time ``t``."""
    total = 0.0
    for t0, t1, terms in segments:
        hi = min(max(t, t0), t1)
        if hi <= t0:
            continue
        x = 0.5 * (hi - t0) * (_GL_NODES + 1.0) + t0
        integrand = np.conj(_loop_integral(segments, x)) * _exp_value(terms, x)
        total += 0.5 * (hi - t0) * float(np.sum(_GL_WEIGHTS * integrand.imag))
    return total


def _loop_signs(config: GateDriveConfig) -> np.ndarray:
    k = np.arange(config.loops)
    return np.ones(config.loops) if config.walsh_flip else (-1.0) ** k


def _loop_forces(config: GateDriveConfig, forces: SpinConfigForces) -> np.ndarray:
    """Force on each spin configuration (rows, pre-echo labels) during each loop (columns)."""
    f = forces.array()
    signs = _loop_signs(config)
    cols = [signs[k] * (f if k % 2 == 0 else f[_FLIP]) for k in range(config.loops)]
    return np.stack(cols, axis=1)


def _drive_rate(config: GateDriveConfig, drive_scale: float) -> float:
    return 2 * math.pi * config.carrier_rabi * drive_scale


def trajectory(
    config: GateDriveConfig,
    forces: SpinConfigForces,
    t,
    *,
    drive_scale: float = 1.0,
    detuning_error: float = 0.0,
) -> np.ndarray:
    """Displacements ``α_s(t)``; shape ``(4,)`` or ``(len(t), 4)``.

    ``detuning_error`` is the fractional mis-set of the true detuning
    relative to the value the pulse timing was designed for.
    """
    scalar = np.ndim(t) == 0
    times = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(times < -1e-15) or np.any(times > config.sequence_duration * (1 + 1e-12)):
        raise ValueError("time outside the gate sequence")
    delta = 2 * math.pi * config.gate_detuning * (1.0 + detuning_error)
    loop_f = _loop_forces(config, forces)
    integrals = np.stack(
        [_loop_integral(_loop_segments(config, k, delta), times) for k in range(config.loops)], axis=1
    )
    alpha = -1j * _drive_rate(config, drive_scale) * integrals @ loop_f.T
    return alpha[0] if scalar else alpha


def _phases_at(config, forces, t, drive_scale, detuning_error=0.0) -> np.ndarray:
    delta = 2 * math.pi * config.gate_detuning * (1.0 + detuning_error)
    segs = [_loop_segments(config, k, delta) for k in range(config.loops)]
    loop_f = _loop_forces(config, forces)
    areas = np.array([_loop_area(s, t) for s in segs])
    ends = np.array([_loop_integral(s, s[-1][1])[0] for s in segs])
    now = np.array([_loop_integral(s, t)[0] for s in segs])
    phi = loop_f**2 @ areas
    for m in range(config.loops):
        for k in range(m):
            phi += loop_f[:, k] * loop_f[:, m] * np.imag(np.conj(ends[k]) * now[m])
    return -(_drive_rate(config, drive_scale) ** 2) * phi


def spin_phases(config: GateDriveConfig, forces: SpinConfigForces, *, drive_scale: float = 1.0,
                t: float | None = None) -> np.ndarray:
    """Geometric phase ``Φ_s`` of each pre-echo spin configuration."""
    t = config.sequence_duration if t is None else t
    return _phases_at(config, forces, t, drive_scale)


def hadamard_decompose(phi: np.ndarray) -> PhaseComponents:
    phi = np.asarray(phi, dtype=float)
    return PhaseComponents(
        float(np.mean(phi)),
        float(np.mean(_Z1 * phi)),
        float(np.mean(_Z2 * phi)),
        float(np.mean(_Z1 * _Z2 * phi)),
    )


def geometric_phases(config: GateDriveConfig, forces: SpinConfigForces, *,
                     drive_scale: float | None = None) -> PhaseComponents:
    """(global, z1, z2, zz) phase components of the full sequence.

    ``drive_scale=None`` uses the calibrated drive (|zz| = π/4).
    """
    if drive_scale is None:
        drive_scale = calibrated_drive_scale(config, forces)
    return hadamard_decompose(spin_phases(config, forces, drive_scale=drive_scale))


def calibrated_drive_scale(config: GateDriveConfig, forces: SpinConfigForces) -> float:
    """Multiplier on ``carrier_rabi`` that makes the ZZ phase ±π/4."""
    zz = hadamard_decompose(spin_phases(config, forces, drive_scale=1.0)).zz
    if abs(zz) < 1e-15:
        raise ValueError("forces produce no two-qubit phase; the gate cannot be calibrated")
    return math.sqrt((math.pi / 4) / abs(zz))


def symmetric_reference_forces(forces: SpinConfigForces) -> SpinConfigForces:
    """Same-species equivalent: no common mode, equal per-ion differential force.

    Each ion gets the rms of the two differential forces, which keeps the
    summed squared drive on the spin-dependent part unchanged.
    """
    f = forces.array()
    a1 = np.mean(_Z1 * f)
    b1 = np.mean(_Z2 * f)
    d = math.sqrt((a1 * a1 + b1 * b1) / 2)
    sign = 1.0 if a1 * b1 >= 0 else -1.0
    return SpinConfigForces(tuple(d * _Z1 + sign * d * _Z2))


def required_rabi_scaling(config: GateDriveConfig, forces: SpinConfigForces) -> float:
    """Rabi-frequency factor over the symmetric same-species gate at equal differential drive."""
    zz = hadamard_decompose(spin_phases(config, forces)).zz
    if abs(zz) < 1e-15:
        raise ValueError("forces produce no two-qubit phase at this configuration")
    ref = hadamard_decompose(spin_phases(config, symmetric_reference_forces(forces))).zz
    return math.sqrt(abs(ref) / abs(zz))


def global_phase_fraction(components: PhaseComponents) -> float:
    """Share of the acquired (mean) phase not converted into the ZZ phase.

    The symmetric light-shift gate has ``|global| = |zz|`` and scores 0.
    """
    if components.global_ == 0:
        return 0.0
    return 1.0 - abs(components.zz) / abs(components.global_)


def residual_displacement(config: GateDriveConfig, forces: SpinConfigForces, *,
                          detuning_error: float = 0.0, drive_scale: float | None = None) -> tuple[float, float]:
    """(max |α_s(end)|, max spin-dependent spread |α_s - α_s'|) at the end of the sequence."""
    if drive_scale is None:
        drive_scale = calibrated_drive_scale(config, forces)
    a = trajectory(config, forces, config.sequence_duration, drive_scale=drive_scale,
                   detuning_error=detuning_error)
    spread = max(abs(a[i] - a[j]) for i in range(4) for j in range(i))
    return float(np.max(np.abs(a))), float(spread)


# ---------------------------------------------------------------------------
# populations (Fig. 2b-style dynamics)
# ---------------------------------------------------------------------------

def _ry_half() -> np.ndarray:
    r = np.cos(np.pi / 4) * np.eye(2) - 1j * np.sin(np.pi / 4) * qcore._Y2
    return np.kron(r, r)


def populations(config: GateDriveConfig, forces: SpinConfigForces, mode: MotionalMode, t: float, *,
                drive_scale: float | None = None) -> np.ndarray:
    """Populations (p_⇓↓, p_⇓↑, p_⇑↓, p_⇑↑) after playing the sequence up to ``t``.

    Sequence: π/2 on both qubits, gate loops (second loop with the same
    initial phase as the first, the calibration variant), echo at each loop
    boundary that has been passed, π/2 on both qubits.  Motional coherence
    is averaged over a thermal state of occupation ``mode.nbar``.
    """
    cal = replace(config, walsh_flip=False)
    if drive_scale is None:
        drive_scale = calibrated_drive_scale(cal, forces)
    alpha = trajectory(cal, forces, t, drive_scale=drive_scale)
    phi = _phases_at(cal, forces, t, drive_scale)
    n_echo = min(int(t / cal.pulse_duration + 1e-12), cal.loops - 1)
    label = np.arange(4) if n_echo % 2 == 0 else _FLIP
    v = _ry_half()
    c = v[:, 0]
    amp = c * np.exp(1j * phi)
    diff = alpha[:, None] - alpha[None, :]
    overlap = np.exp(1j * np.imag(-alpha[None, :] * np.conj(alpha[:, None])))
    overlap = overlap * np.exp(-np.abs(diff) ** 2 * (2 * mode.nbar + 1) / 2)
    # overlap[s, s'] = <D(α_s') D(α_s)>: state s ket, s' bra
    vm = v[:, label]  # vm[m, s] = <m|V|label(s)>
    rho = np.outer(amp, np.conj(amp)) * overlap
    p = np.real(np.einsum("ms,st,mt->m", vm, rho, np.conj(vm)))
    return p


def dynamics(config: GateDriveConfig, forces: SpinConfigForces, mode: MotionalMode, times) -> np.ndarray:
    drive_scale = calibrated_drive_scale(replace(config, walsh_flip=False), forces)
    return np.array([populations(config, forces, mode, t, drive_scale=drive_scale) for t in times])


# ---------------------------------------------------------------------------
# channels and error budget
# ---------------------------------------------------------------------------

def ideal_gate_unitary() -> np.ndarray:
    """(π_x ⊗ π_x) · exp(-iπ/4 Z⊗Z); the echo pulses sit inside the gate."""
    zz = np.kron(qcore._Z2, qcore._Z2)
    pi_x = -1j * qcore._X2
    return np.kron(pi_x, pi_x) @ (np.cos(np.pi / 4) * np.eye(4) - 1j * np.sin(np.pi / 4) * zz)


def ideal_gate() -> np.ndarray:
    return qcore.ptm_from_unitary(ideal_gate_unitary())


@dataclass(frozen=True)
class BudgetItem:
    source: str
    error: float


def heating_error(config: GateDriveConfig) -> float:
    return config.mode.heating_rate * config.gate_time / 4


def scattering_error(config: GateDriveConfig, species=(CALCIUM, STRONTIUM), rabi_scaling: float = 1.0) -> float:
    """Raman + Rayleigh scattering summed over both ions and both beams.

    Per beam the scattering rate is ``Γ g²/(4Δ²)`` with the single-beam
    Rabi frequency ``g²= 2|Δ| Ω_R``; two beams give ``Γ Ω_R / |Δ|`` per ion.
    Every scattered photon is counted as an error.
    """
    omega_r = config.carrier_rabi * rabi_scaling
    rate = sum(2 * math.pi * sp.linewidth * omega_r / abs(sp.raman_detuning) for sp in species)
    return rate * config.gate_time


def dephasing_error(config: GateDriveConfig, noise: NoiseSpec) -> float:
    probs = [(1 - math.exp(-g * config.gate_time)) / 2 for g in noise.dephasing_rates]
    return (qcore.DIM / (qcore.DIM + 1)) * sum(probs)


def _incoherent_items(config, noise, species):
    items = []
    if noise.stray_field:
        items.append(BudgetItem("stray field", noise.stray_coefficient * noise.stray_field**2))
    if noise.include_heating:
        items.append(BudgetItem("heating", heating_error(config)))
    if noise.include_scattering:
        scale = required_rabi_scaling(config, force_amplitudes(species[0], species[1], config.mode))
        items.append(BudgetItem("photon scattering", scattering_error(config, species, scale)))
    if noise.kerr_error:
        items.append(BudgetItem("Kerr cross-coupling", noise.kerr_error))
    if noise.spectator_error:
        items.append(BudgetItem("spectator modes", noise.spectator_error))
    return items


def error_budget(config: GateDriveConfig, noise: NoiseSpec, modes=None,
                 species=(CALCIUM, STRONTIUM)) -> list[BudgetItem]:
    """Itemised error contributions in a fixed order, plus a total.

    ``modes`` (label -> MotionalMode), when given, supplies the heating rate
    of the gate mode instead of ``config.mode``.
    """
    if modes is not None:
        config = replace(config, mode=modes[config.mode.label])
    items = [BudgetItem("single-qubit pi/2 rotations", noise.single_qubit_error)]
    items += _incoherent_items(config, noise, species)
    items.append(BudgetItem("spin dephasing", dephasing_error(config, noise)))
    if noise.depolarizing_p:
        items.append(BudgetItem("depolarizing", noise.depolarizing_p * (qcore.DIM**2 - 1) / qcore.DIM**2
                                * qcore.DIM / (qcore.DIM + 1)))
    items.append(BudgetItem("total", sum(i.error for i in items)))
    return items


def noisy_gate_channel(config: GateDriveConfig, noise: NoiseSpec, species=(CALCIUM, STRONTIUM)) -> np.ndarray:
    ideal = ideal_gate()
    if noise.is_zero():
        return ideal
    eps = sum(i.error for i in _incoherent_items(config, noise, species))
    t = config.gate_time
    deph = [(1 - math.exp(-g * t)) / 2 for g in noise.dephasing_rates]
    predicted = eps + dephasing_error(config, noise) + noise.depolarizing_p
    if predicted >= 0.5:
        raise ValueError(f"predicted error {predicted:.3g} outside the model's validity range")
    zz = np.kron(qcore._Z2, qcore._Z2)
    theta = noise.coherent_zz_offset
    u_off = math.cos(theta / 2) * np.eye(4) - 1j * math.sin(theta / 2) * zz
    channel = qcore.compose(
        qcore.depolarizing_from_infidelity(eps),
        qcore.depolarizing_ptm(noise.depolarizing_p),
        qcore.single_qubit_ptm(qcore.dephasing_ptm_1q(deph[0]), 0),
        qcore.single_qubit_ptm(qcore.dephasing_ptm_1q(deph[1]), 1),
        qcore.ptm_from_unitary(u_off),
        ideal,
    )
    if not qcore.is_cptp(channel, 1e-9):
        raise ValueError("noise parameters produce a non-CPTP gate channel")
    return channel


# ---------------------------------------------------------------------------
# resonances
# ---------------------------------------------------------------------------

def check_resonances(modes, gate_detuning: float, window: float | None = None) -> list[str]:
    """Warnings for the three mode-frequency coincidences that degrade the gate."""
    by_label = {m.label: m for m in (modes.values() if isinstance(modes, dict) else modes)}
    missing = {"ax_ip", "ax_oop", "rad_ip", "rad_oop"} - set(by_label)
    if missing:
        raise ValueError(f"missing modes: {sorted(missing)}")
    window = 2 * abs(gate_detuning) if window is None else window
    ax_ip = by_label["ax_ip"].frequency
    ax_oop = by_label["ax_oop"].frequency
    rad_oop = by_label["rad_oop"].frequency
    warnings = []
    if abs(ax_oop - 2 * rad_oop) < window:
        warnings.append(f"(i) f_ax,oop ~ 2 f_rad,oop ({ax_oop:.6g} vs {2 * rad_oop:.6g} Hz): "
                        "Kerr cross-coupling to hot radial modes")
    if abs(2 * ax_ip - (ax_oop + gate_detuning)) < window:
        warnings.append(f"(ii) 2 f_ax,ip ~ f_ax,oop + delta_g ({2 * ax_ip:.6g} vs "
                        f"{ax_oop + gate_detuning:.6g} Hz): higher-harmonic excitation")
    if abs(ax_ip - rad_oop) < window:
        warnings.append(f"(iii) f_ax,ip ~ f_rad,oop ({ax_ip:.6g} vs {rad_oop:.6g} Hz): "
                        "radial excitation for an ip-mode gate")
    return warnings
