"""Command-line entry point: ``mixgate <command> [options]``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import backend as bk
from . import circuits, config, dataset, gatesim, gst, pst, rbm

RBM_SEQUENCES = "rbm_sequences.jsonl"
RBM_COUNTS = "rbm_counts.txt"
GST_DESIGN = "gst_design.txt"
GST_COUNTS = "gst_counts.txt"
GST_ESTIMATE = "gst_estimate.json"
PST_COUNTS = "pst_counts.txt"


class CliError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n",
                    encoding="utf-8")


def write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])


def _out(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _need(path: Path, what: str) -> Path:
    if not path.exists():
        raise CliError(f"{what} not found: {path}")
    return path


def _backend(args, cfg) -> bk.SimBackend:
    return bk.SimBackend(config.backend_config(cfg, args.seed))


def _imported(args, expected_texts) -> dataset.CountDataset:
    """Load a measured dataset for ``--backend dataset`` and check it covers the design."""
    if not args.data:
        raise CliError("--backend dataset needs --data <file>")
    data = dataset.CountDataset.load(args.data)
    have = [circuits.canonical(r.circuit) for r in data.records]
    if have != list(expected_texts):
        raise CliError("imported dataset does not match the circuit design record by record")
    return data


# ---------------------------------------------------------------------------
# gate physics
# ---------------------------------------------------------------------------

def cmd_dynamics(args, cfg) -> int:
    gate = config.gate_config(cfg)
    ca, sr = config.species(cfg)
    forces = gatesim.force_amplitudes(ca, sr, gate.mode)
    times = np.linspace(0.0, gate.sequence_duration, args.points)
    pops = gatesim.dynamics(gate, forces, gate.mode, times)
    out = _out(args)
    write_csv(out / "fig2b.csv", ["time_us", "p_dd", "p_du", "p_ud", "p_uu"],
              [[t * 1e6, *p] for t, p in zip(times, pops)])
    print(f"wrote {out / 'fig2b.csv'} ({len(times)} points)")
    return 0


def cmd_budget(args, cfg) -> int:
    gate = config.gate_config(cfg)
    items = gatesim.error_budget(gate, config.noise(cfg), config.modes(cfg), config.species(cfg))
    width = max(len(i.source) for i in items)
    for item in items:
        print(f"{item.source:<{width}}  {item.error * 1e4:6.2f}e-4")
    if args.out:
        write_json(_out(args) / "budget.json", {i.source: i.error for i in items})
    return 0


def cmd_resonances(args, cfg) -> int:
    warnings = gatesim.check_resonances(config.modes(cfg), float(cfg["gate.detuning"]))
    for w in warnings:
        print(f"warning: {w}")
    if not warnings:
        print("no mode-frequency coincidences within the detection window")
    return 0


# ---------------------------------------------------------------------------
# randomized benchmarking
# ---------------------------------------------------------------------------

def _load_sequences(path: Path) -> list[rbm.RbmSequence]:
    out = []
    for line in _need(path, "sequence file").read_text(encoding="utf-8").splitlines():
        d = json.loads(line)
        out.append(rbm.RbmSequence(d["length"], d["index"], d["interleaved"], tuple(d["cliffords"]),
                                   d["inverse"], tuple(d["frame"]), d["expected"]))
    return out


def cmd_rbm_gen(args, cfg) -> int:
    design = config.rbm_design(cfg, args.shots)
    seed = int(cfg["backend.seed"] if args.seed is None else args.seed)
    seqs = rbm.generate(design, np.random.default_rng(seed))
    out = _out(args)
    (out / RBM_SEQUENCES).write_text("".join(json.dumps(asdict(s), sort_keys=True) + "\n" for s in seqs),
                                     encoding="utf-8")
    print(f"wrote {len(seqs)} sequences to {out / RBM_SEQUENCES}")
    return 0


def cmd_rbm_run(args, cfg) -> int:
    out = _out(args)
    seqs = _load_sequences(out / RBM_SEQUENCES)
    shots = int(args.shots or cfg["rbm.shots"])
    if args.backend == "dataset":
        data = _imported(args, [s.text() for s in seqs])
    else:
        data = rbm.run_dataset(_backend(args, cfg), seqs, shots)
    data.store(out / RBM_COUNTS)
    print(f"wrote {len(data)} records to {out / RBM_COUNTS}")
    return 0


def cmd_rbm_fit(args, cfg) -> int:
    out = _out(args)
    seqs = _load_sequences(out / RBM_SEQUENCES)
    data = dataset.CountDataset.load(_need(out / RBM_COUNTS, "count dataset"))
    surv = rbm.sequence_fidelity(data, seqs)
    seed = int(cfg["backend.seed"] if args.seed is None else args.seed)
    rng = np.random.default_rng(seed)
    result = rbm.bootstrap(rbm.fit_pair(surv), surv, rng, int(cfg["rbm.bootstrap"]))
    weighted = rbm.fit_pair(surv, weighted=True)  # reported alongside; the default fit is unweighted
    rows = []
    for flag, fit in ((False, result.reference), (True, result.interleaved)):
        lengths, means, sems = surv.series(flag)
        rows += [["interleaved" if flag else "reference", L, m, s, fit.model([L])[0]]
                 for L, m, s in zip(lengths, means, sems)]
    write_csv(out / "fig3b.csv", ["series", "length", "fidelity", "sem", "model"], rows)
    max_lengths = [int(x) for x in config._tuple(cfg["rbm.max_lengths"])]
    trend = rbm.error_vs_maxlen(surv, max_lengths, rng, max(2, int(cfg["rbm.bootstrap"]) // 2))
    write_csv(out / "fig3c.csv", ["max_length", "gate_error", "sigma"], trend)
    report = {
        "reference": {**asdict(result.reference), "error": result.reference.error,
                      "sigma": result.sigma_reference},
        "interleaved": {**asdict(result.interleaved), "error": result.interleaved.error,
                        "sigma": result.sigma_interleaved},
        "gate_error": result.gate_error,
        "gate_sigma": result.sigma_gate,
        "failed_resamples": result.failed_resamples,
        "weighted_fit": {"reference_error": weighted.reference.error,
                         "interleaved_error": weighted.interleaved.error, "gate_error": weighted.gate_error},
    }
    write_json(out / "rbm_report.json", report)
    print(f"eps_ref = {result.reference.error:.3e} +- {result.sigma_reference:.1e}")
    print(f"eps_int = {result.interleaved.error:.3e} +- {result.sigma_interleaved:.1e}")
    print(f"eps_G   = {result.gate_error:.3e} +- {result.sigma_gate:.1e}")
    return 0


# ---------------------------------------------------------------------------
# gate set tomography
# ---------------------------------------------------------------------------

def _gst_plan(cfg) -> gst.DesignPlan:
    return gst.build_design(germs=config.gst_germs(cfg), lengths=config.gst_lengths(cfg))


def cmd_gst_design(args, cfg) -> int:
    plan = _gst_plan(cfg)
    out = _out(args)
    (out / GST_DESIGN).write_text("".join(f"{plan.design.lengths[l]}\t{t}\n"
                                          for t, l in zip(plan.texts, plan.level)), encoding="utf-8")
    print(f"wrote {len(plan.texts)} circuits to {out / GST_DESIGN}")
    return 0


def cmd_gst_run(args, cfg) -> int:
    out = _out(args)
    plan = _gst_plan(cfg)
    if args.backend == "dataset":
        data = _imported(args, plan.texts)
    else:
        shots = int(args.shots or cfg["gst.shots"])
        data = bk.run_circuits(_backend(args, cfg), plan.texts, shots, {"experiment": "gst"})
    data.store(out / GST_COUNTS)
    print(f"wrote {len(data)} records to {out / GST_COUNTS}")
    return 0


def _gateset_to_json(gs: gst.GateSet) -> dict:
    return {"gates": {k: v for k, v in gs.gates.items()}, "rho": gs.rho, "effects": gs.effects,
            "converged": gs.converged}


def _gateset_from_json(d: dict) -> gst.GateSet:
    return gst.GateSet({k: np.array(v) for k, v in d["gates"].items()}, np.array(d["rho"]),
                       np.array(d["effects"]), bool(d["converged"]))


def cmd_gst_fit(args, cfg) -> int:
    out = _out(args)
    plan = _gst_plan(cfg)
    data = dataset.CountDataset.load(_need(out / GST_COUNTS, "count dataset"))
    estimate = gst.mle_fit(data, plan)
    gof = estimate.info["gof"]
    gauged = gst.gauge_optimize(estimate)
    payload = _gateset_to_json(gauged)
    payload["gof"] = {"lengths": gof.lengths, "statistics": gof.statistics, "dofs": gof.dofs,
                      "nsigma": gof.nsigma}
    write_json(out / GST_ESTIMATE, payload)
    write_csv(out / "fig4d.csv", ["max_length", "loglr", "dof", "nsigma"],
              zip(gof.lengths, gof.statistics, gof.dofs, gof.nsigma))
    for L, ns in zip(gof.lengths, gof.nsigma):
        print(f"L <= {L:3d}: Nsigma = {ns:8.2f}")
    if not estimate.converged:
        raise CliError("maximum-likelihood fit did not converge")
    return 0


def cmd_gst_report(args, cfg) -> int:
    out = _out(args)
    payload = json.loads(_need(out / GST_ESTIMATE, "GST estimate").read_text(encoding="utf-8"))
    rep = gst.report(_gateset_from_json(payload))
    metrics = {label: {k: v for k, v in asdict(r).items() if k != "generator"}
               for label, r in rep["gates"].items()}
    g = rep["gates"]["Gzz"]
    write_json(out / "fig4b.json", {"gate": "Gzz", "ptm": payload["gates"]["Gzz"],
                                    "error_generator": g.generator})
    score = gst.germ_completeness(config.gst_germs(cfg), gst.perturbed_target())
    germs = {"rank": score.rank, "required": score.required, "complete": score.complete}
    write_json(out / "fig4c.json", {"gates": metrics, "parameters": rep["parameters"], "germ_completeness": germs})
    for label, m in metrics.items():
        print(f"{label:7s} r = {m['average_infidelity']:.3e}  diamond = {m['diamond_distance']:.3e}  "
              f"coherent = {m['coherent_fraction']:.2f}")
    print(f"germ amplificational completeness: rank {score.rank} of {score.required}")
    return 0


# ---------------------------------------------------------------------------
# partial state tomography
# ---------------------------------------------------------------------------

def cmd_pst_run(args, cfg) -> int:
    out = _out(args)
    if args.backend == "dataset":
        texts = [circuits.canonical(t) for t in list(pst.pst_circuits().values()) + list(pst.CALIBRATION_CIRCUITS)]
        data = _imported(args, texts)
    else:
        shots = int(args.shots or cfg["pst.shots"])
        _, data = pst.run_pst(_backend(args, cfg), shots, int(cfg["pst.calibration_shots"]))
    data.store(out / PST_COUNTS)
    print(f"wrote {len(data)} records to {out / PST_COUNTS}")
    return 0


def cmd_pst_report(args, cfg) -> int:
    out = _out(args)
    result = pst.analyse_dataset(dataset.CountDataset.load(_need(out / PST_COUNTS, "count dataset")))
    write_json(out / "pst_report.json", result.to_dict())
    print(f"raw error       = {result.raw_error:.3e} +- {result.sigma_raw:.1e}")
    print(f"corrected error = {result.error:.3e} +- {result.sigma:.1e}")
    if result.clipped or result.projected:
        print("note: corrected populations were projected or the fidelity clipped")
    return 0


# ---------------------------------------------------------------------------

def cmd_selftest(args, cfg) -> int:
    from . import acceptance

    only = [int(x) for x in args.only.split(",")] if args.only else None
    results = acceptance.run_all(only, quick=args.quick)
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="configuration file overriding the defaults")
    common.add_argument("--seed", type=int, help="root seed (unsigned 64-bit)")
    common.add_argument("--out", help="output directory (default: current directory)")
    common.add_argument("--shots", type=int, help="shots per circuit")
    common.add_argument("--backend", choices=("sim", "dataset"), default="sim",
                        help="simulate counts or import them with --data")
    common.add_argument("--data", help="count dataset to import with --backend dataset")

    parser = argparse.ArgumentParser(prog="mixgate", description="Mixed-species gate simulation and characterisation.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("dynamics", parents=[common], help="population dynamics during the gate (fig2b.csv)")
    p.add_argument("--points", type=int, default=201)
    p.set_defaults(func=cmd_dynamics)
    sub.add_parser("budget", parents=[common], help="itemised gate error budget").set_defaults(func=cmd_budget)
    sub.add_parser("resonances", parents=[common], help="check mode-frequency coincidences").set_defaults(
        func=cmd_resonances)

    groups = {
        "rbm": {"gen": cmd_rbm_gen, "run": cmd_rbm_run, "fit": cmd_rbm_fit},
        "gst": {"design": cmd_gst_design, "run": cmd_gst_run, "fit": cmd_gst_fit, "report": cmd_gst_report},
        "pst": {"run": cmd_pst_run, "report": cmd_pst_report},
    }
    for name, actions in groups.items():
        gp = sub.add_parser(name, help=f"{name} workflow: {'|'.join(actions)}")
        gsub = gp.add_subparsers(dest="action", required=True, metavar="action")
        for action, func in actions.items():
            gsub.add_parser(action, parents=[common]).set_defaults(func=func)

    p = sub.add_parser("selftest", parents=[common], help="run the acceptance checks")
    p.add_argument("--only", help="comma-separated criterion numbers")
    p.add_argument("--quick", action="store_true", help="reduced trial counts")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.seed is not None and not 0 <= args.seed < 2**64:
        parser.error("--seed must be an unsigned 64-bit integer")
    if args.shots is not None and args.shots <= 0:
        parser.error("--shots must be positive")
    try:
        cfg = config.load(args.config)
        return args.func(args, cfg)
    except (CliError, config.ConfigError, dataset.DatasetError, circuits.CircuitSyntaxError,
            rbm.FitError, gst.GstError, ValueError, OSError) as exc:
        print(f"mixgate: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
