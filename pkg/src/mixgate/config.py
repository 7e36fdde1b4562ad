"""Flat ``section.key = value`` configuration and typed builders."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from . import backend as bk
from . import gatesim, gst, rbm


class ConfigError(ValueError):
    pass


def _convert(text: str):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if "," in text:
        return [_convert(t.strip()) for t in text.split(",") if t.strip()]
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def parse(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        out[key.strip()] = _convert(value.strip())
    return out


def defaults() -> dict:
    text = resources.files("mixgate").joinpath("data/default.cfg").read_text(encoding="utf-8")
    return parse(text, "default.cfg")


def _kind(v) -> str:
    if isinstance(v, bool):
        return "boolean"
    if isinstance(v, (int, float)):
        return "number"
    return "text"


def _check_types(extra: dict, cfg: dict) -> None:
    for key, value in extra.items():
        want = cfg[key]
        if isinstance(want, list):
            items = value if isinstance(value, list) else [value]
            if any(_kind(v) != _kind(want[0]) for v in items):
                raise ConfigError(f"{key}: expected a list of {_kind(want[0])} values, got {value!r}")
        elif _kind(value) != _kind(want) or isinstance(value, list):
            raise ConfigError(f"{key}: expected a {_kind(want)} value, got {value!r}")


def load(path=None) -> dict:
    """Defaults overlaid with the file at ``path``; unknown keys are rejected."""
    cfg = defaults()
    if path is not None:
        extra = parse(Path(path).read_text(encoding="utf-8"), str(path))
        unknown = sorted(set(extra) - set(cfg))
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        _check_types(extra, cfg)
        cfg.update(extra)
    return cfg


def _tuple(v) -> tuple:
    return tuple(v) if isinstance(v, list) else (v,)


def species(cfg: dict) -> tuple[gatesim.IonSpecies, gatesim.IonSpecies]:
    coeffs = gatesim.derive_lightshift_coefficients(
        cfg["ca.eta_oop"], cfg["sr.eta_oop"], cfg["forces.zz_share"], cfg["forces.rabi_scaling"])
    out = []
    for prefix, (up, down) in (("ca", coeffs[:2]), ("sr", coeffs[2:])):
        out.append(gatesim.IonSpecies(
            name=str(cfg[f"{prefix}.name"]), mass=float(cfg[f"{prefix}.mass"]),
            raman_detuning=float(cfg[f"{prefix}.raman_detuning"]), linewidth=float(cfg[f"{prefix}.linewidth"]),
            qubit_frequency=float(cfg[f"{prefix}.qubit_frequency"]), eta_ip=float(cfg[f"{prefix}.eta_ip"]),
            eta_oop=float(cfg[f"{prefix}.eta_oop"]), lightshift_amp_up=up, lightshift_amp_down=down))
    return out[0], out[1]


def modes(cfg: dict) -> dict[str, gatesim.MotionalMode]:
    f_ip, f_oop = gatesim.axial_mode_frequencies(cfg["trap.ion_spacing"], cfg["ca.mass"], cfg["sr.mass"])
    freqs = {"ax_ip": f_ip, "ax_oop": f_oop,
             "rad_ip": cfg["mode.rad_ip.frequency"], "rad_oop": cfg["mode.rad_oop.frequency"]}
    return {label: gatesim.MotionalMode(label, float(freqs[label]), float(cfg[f"mode.{label}.nbar"]),
                                        float(cfg.get(f"mode.{label}.heating_rate", 0.0)))
            for label in freqs}


def gate_config(cfg: dict) -> gatesim.GateDriveConfig:
    return gatesim.GateDriveConfig(
        mode=modes(cfg)[cfg["gate.mode"]], gate_detuning=float(cfg["gate.detuning"]),
        loops=int(cfg["gate.loops"]), shaping_time=float(cfg["gate.shaping_time"]),
        walsh_flip=bool(cfg["gate.walsh_flip"]), carrier_rabi=float(cfg["gate.carrier_rabi"]),
        ion_spacing_ratio=float(cfg["gate.ion_spacing_ratio"]))


def noise(cfg: dict) -> gatesim.NoiseSpec:
    return gatesim.NoiseSpec(
        dephasing_rates=tuple(float(x) for x in _tuple(cfg["noise.dephasing_rates"])),
        include_heating=bool(cfg["noise.include_heating"]),
        include_scattering=bool(cfg["noise.include_scattering"]),
        kerr_error=float(cfg["noise.kerr_error"]), spectator_error=float(cfg["noise.spectator_error"]),
        stray_field=float(cfg["noise.stray_field"]), stray_coefficient=float(cfg["noise.stray_coefficient"]),
        single_qubit_error=float(cfg["noise.single_qubit_error"]))


def drift(cfg: dict) -> bk.DriftModel:
    return bk.DriftModel(float(cfg["drift.heating_rate"]), float(cfg["drift.error_per_quantum"]),
                         float(cfg["drift.gate_duration"]), float(cfg["drift.pulse_duration"]),
                         float(cfg["drift.pi_duration"]))


def backend_config(cfg: dict, seed: int | None = None) -> bk.SimBackendConfig:
    gi = cfg["backend.gate_infidelity"]
    return bk.SimBackendConfig(
        seed=int(cfg["backend.seed"] if seed is None else seed),
        gate_infidelity=None if gi == "model" else float(gi),
        noise=noise(cfg),
        pulse_infidelity=float(cfg["backend.pulse_infidelity"]),
        readout_errors=(float(cfg["backend.readout_ca"]), float(cfg["backend.readout_sr"])),
        drift=drift(cfg) if cfg["backend.drift"] else None,
    )


def rbm_design(cfg: dict, shots: int | None = None) -> rbm.RbmDesign:
    return rbm.RbmDesign(tuple(int(x) for x in _tuple(cfg["rbm.lengths"])), int(cfg["rbm.randomizations"]),
                         int(shots or cfg["rbm.shots"]))


def gst_lengths(cfg: dict) -> tuple[int, ...]:
    return tuple(int(x) for x in _tuple(cfg["gst.lengths"]))


def gst_germs(cfg: dict):
    choice = cfg["gst.germs"]
    if choice == "default":
        return gst.default_germs()
    if choice == "complete":
        return gst.complete_germs()
    raise ConfigError(f"gst.germs must be 'default' or 'complete', got {choice!r}")
