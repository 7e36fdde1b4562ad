"""Simulated shot backend.

States are propagated as Pauli vectors through noisy gate PTMs.  Physical
single-qubit pulses get a depolarising error, software Z rotations are
exact, and the entangling gate is either a depolarising channel with a
given infidelity, an explicit PTM, or the full gatesim noise model.

Under the linear-heating drift model the entangling gate picks up extra
depolarising error ``error_per_quantum · heating_rate · t``, where ``t`` is
the elapsed sequence time at the start of that gate (fixed op durations).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import circuits, clifford, dataset, gatesim, qcore
from .circuits import Op


@dataclass(frozen=True)
class DriftModel:
    heating_rate: float = 110.0  # quanta / s, ip mode
    error_per_quantum: float = 3e-3 / 1.8
    gate_duration: float = 60e-6
    pulse_duration: float = 15e-6
    pi_duration: float = 30e-6

    def duration(self, op: Op) -> float:
        if circuits.is_entangling(op):
            return self.gate_duration
        if circuits.is_software(op):
            return 0.0
        return self.pi_duration if op.gate == "Gpi" else self.pulse_duration

    def gate_error(self, elapsed: float) -> float:
        return self.error_per_quantum * self.heating_rate * elapsed


@dataclass(frozen=True)
class SimBackendConfig:
    seed: int = 0
    gate_infidelity: float | None = 0.0  # None: use gatesim with `noise`
    noise: gatesim.NoiseSpec = field(default_factory=gatesim.NoiseSpec)
    gate_ptm: np.ndarray | None = field(default=None, compare=False)
    pulse_infidelity: float = 0.0
    readout_errors: tuple[float, float] = (0.0, 0.0)  # (Ca, Sr) symmetric flip probabilities
    drift: DriftModel | None = None
    # two-qubit depolarising after every single-qubit op (software ones included)
    local_depolarizing: float = 0.0
    prep_depolarizing: float = 0.0

    def describe(self) -> str:
        parts = [f"sim seed={self.seed}"]
        if self.gate_ptm is not None:
            parts.append("gate=explicit")
        elif self.gate_infidelity is None:
            parts.append("gate=gatesim")
        else:
            parts.append(f"gate_infidelity={self.gate_infidelity!r}")
        parts.append(f"pulse_infidelity={self.pulse_infidelity!r}")
        parts.append(f"readout={self.readout_errors[0]!r},{self.readout_errors[1]!r}")
        if self.local_depolarizing:
            parts.append(f"local_depolarizing={self.local_depolarizing!r}")
        if self.prep_depolarizing:
            parts.append(f"prep_depolarizing={self.prep_depolarizing!r}")
        if self.drift is not None:
            parts.append(f"drift=linear-heating({self.drift.heating_rate!r}/s)")
        return " ".join(parts)


def confusion_matrix(eps_ca: float, eps_sr: float) -> np.ndarray:
    """``M[observed, true]`` for independent symmetric readout flips."""
    def one(e):
        return np.array([[1 - e, e], [e, 1 - e]])
    return np.kron(one(eps_ca), one(eps_sr))


_GROUND = qcore.state_to_vector(qcore.density_matrix(qcore.ket(0)))


class SimBackend:
    def __init__(self, config: SimBackendConfig):
        self.config = config
        self._op_cache: dict[Op, np.ndarray] = {}
        self._clifford_cache: dict[int, np.ndarray] = {}

    @cached_property
    def gate_ptm(self) -> np.ndarray:
        c = self.config
        if c.gate_ptm is not None:
            return np.asarray(c.gate_ptm, dtype=float)
        if c.gate_infidelity is None:
            return gatesim.noisy_gate_channel(gatesim.default_config(), c.noise)
        return qcore.depolarizing_from_infidelity(c.gate_infidelity) @ gatesim.ideal_gate()

    @cached_property
    def initial_state(self) -> np.ndarray:
        return qcore.depolarizing_ptm(self.config.prep_depolarizing) @ _GROUND

    @cached_property
    def confusion(self) -> np.ndarray:
        return confusion_matrix(*self.config.readout_errors)

    def op_ptm(self, op: Op) -> np.ndarray:
        m = self._op_cache.get(op)
        if m is None:
            if circuits.is_entangling(op):
                m = self.gate_ptm
            elif circuits.is_software(op) or self.config.pulse_infidelity == 0:
                m = circuits.op_ptm(op)
            else:
                # single-qubit depolarising p has average infidelity p/2
                noise = qcore.single_qubit_ptm(
                    qcore.depolarizing_ptm_1q(2 * self.config.pulse_infidelity), op.qubit - 1)
                m = noise @ circuits.op_ptm(op)
            if self.config.local_depolarizing and not circuits.is_entangling(op):
                m = qcore.depolarizing_ptm(self.config.local_depolarizing) @ m
            self._op_cache[op] = m
        return m

    def clifford_ptm(self, element: clifford.TwoQubitClifford) -> np.ndarray:
        m = self._clifford_cache.get(element.index)
        if m is None:
            m = np.eye(16)
            for op in clifford.decompose(element).ops:
                m = self.op_ptm(op) @ m
            self._clifford_cache[element.index] = m
        return m

    def _expand(self, blocks):
        for b in blocks:
            if isinstance(b, clifford.TwoQubitClifford):
                yield from clifford.decompose(b).ops
            else:
                yield b

    def final_state(self, blocks) -> np.ndarray:
        """Pauli vector after a circuit; blocks are Ops or Clifford elements."""
        r = self.initial_state.copy()
        drift = self.config.drift
        if drift is None:
            for b in blocks:
                m = self.clifford_ptm(b) if isinstance(b, clifford.TwoQubitClifford) else self.op_ptm(b)
                r = m @ r
            return r
        elapsed = 0.0
        for op in self._expand(blocks):
            r = self.op_ptm(op) @ r
            if circuits.is_entangling(op):
                extra = drift.gate_error(elapsed)
                r = qcore.depolarizing_from_infidelity(extra) @ r
            elapsed += drift.duration(op)
        return r

    def probabilities(self, blocks) -> np.ndarray:
        rho = qcore.vector_to_state(self.final_state(blocks))
        p = np.clip(np.real(np.diag(rho)), 0.0, None)
        p = self.confusion @ (p / p.sum())
        return p / p.sum()

    def simulate_shots(self, blocks, shots: int, index: int = 0, text: str | None = None) -> np.ndarray:
        blocks = list(blocks)
        if text is None:
            text = circuits.serialize_circuit(tuple(self._expand(blocks)))
        rng = np.random.default_rng(dataset.record_seed(self.config.seed, text, index))
        return rng.multinomial(int(shots), self.probabilities(blocks))


def simulate_shots(backend: SimBackendConfig | SimBackend, circuit, shots: int, index: int = 0) -> np.ndarray:
    if isinstance(backend, SimBackendConfig):
        backend = SimBackend(backend)
    if isinstance(circuit, str):
        circuit = circuits.parse_circuit(circuit)
    return backend.simulate_shots(circuit, shots, index)


def predict(backend: SimBackendConfig | SimBackend, circuit) -> np.ndarray:
    if isinstance(backend, SimBackendConfig):
        backend = SimBackend(backend)
    if isinstance(circuit, str):
        circuit = circuits.parse_circuit(circuit)
    return backend.probabilities(circuit)


def run_circuits(backend: SimBackend, texts, shots: int, metadata: dict | None = None) -> dataset.CountDataset:
    records = []
    for i, text in enumerate(texts):
        canon = circuits.canonical(text)
        counts = backend.simulate_shots(circuits.parse_circuit(canon), shots, i, canon)
        records.append(dataset.CountRecord(canon, tuple(int(c) for c in counts)))
    meta = {"seed": str(backend.config.seed), "backend": backend.config.describe(),
            "timestamp": dataset.timestamp()}
    meta.update(metadata or {})
    return dataset.CountDataset(records, meta)
