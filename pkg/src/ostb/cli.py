"""Command-line front end.

    python -m ostb build    --config run.json --out out/
    python -m ostb solve    --config run.json [--model out/model.json] [--verify-unichain]
    python -m ostb simulate --config run.json [--policy out/policy.json]
    python -m ostb compare  --config run.json
    python -m ostb sweep    --config run.json | --recipe fig6
    python -m ostb verify   --config run.json

Exit codes: 0 success, 2 configuration error, 3 solver failure,
4 verification failure.  Every command writes ``manifest-<command>.json``
next to its outputs; timestamps appear only there.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, check_sweep_variable, load_config, table_one_config
from .mdp import MdpModel
from .pipeline import build_model, random_policies, scheduler_for, sim_config, solve_model
from .recipes import RECIPES, run_recipe
from .simulator import aggregate, compare, simulate_many
from .solver import (SolverError, load_policy, policy_document, threshold_violations,
                     verify_unichain)

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_VERIFY = 0, 2, 3, 4
log = logging.getLogger("ostb")


class VerificationError(RuntimeError):
    pass


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.6g}"
    return x


def write_table(base: Path, header, rows, formats) -> list[Path]:
    out = []
    if "csv" in formats:
        path = base.with_suffix(".csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(x) for x in row])
        out.append(path)
    if "json" in formats:
        path = base.with_suffix(".json")
        write_json(path, [dict(zip(header, (_plain(x) for x in row))) for row in rows])
        out.append(path)
    return out


def _plain(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return x


def write_json(path: Path, obj) -> Path:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_plain)
        fh.write("\n")
    return path


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, cfg: RunConfig, inputs, outputs) -> Path:
    doc = {
        "tool": "ostb",
        "version": __version__,
        "command": command,
        "config_hash": cfg.config_hash(),
        "model_hash": cfg.model_hash(),
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "inputs": [str(p) for p in inputs],
        "outputs": [{"path": str(p), "sha256": _sha(p)} for p in outputs],
    }
    return write_json(out / f"manifest-{command}.json", doc)


def _load_model(path, cfg: RunConfig) -> MdpModel:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("model_hash") and doc["model_hash"] != cfg.model_hash():
        raise ConfigError(f"{path} was built from a different configuration "
                          f"({doc['model_hash']} != {cfg.model_hash()})")
    return MdpModel.from_dict(doc)


def cmd_build(args, cfg, out):
    model = build_model(cfg)
    doc = model.to_dict()
    doc["model_hash"] = cfg.model_hash()
    path = out / "model.json"
    with open(path, "w") as fh:
        json.dump(doc, fh)
    log.info("built model with %d states and %d state-action pairs",
             model.n_states, model.n_pairs)
    return [path]


def cmd_solve(args, cfg, out):
    model = _load_model(args.model, cfg) if args.model else build_model(cfg)
    sol = solve_model(model, cfg)
    doc = policy_document(sol, model, cfg.model_hash())
    outputs = [write_json(out / "policy.json", doc)]
    gain = {
        "model_hash": cfg.model_hash(),
        "criterion": model.options["criterion"],
        "gain": sol.occupation.objective,
        "rvi_gain": sol.rvi.gain,
        "reward_per_interval": sol.report.reward_per_interval,
        "tasks_per_interval": sol.report.tasks_per_interval,
        "epochs_per_interval": sol.report.epochs_per_interval,
        "lp_iterations": sol.occupation.iterations,
        "rvi_iterations": sol.rvi.iterations,
        "threshold_structured": sol.thresholds is not None,
    }
    outputs.append(write_json(out / "gain.json", gain))
    if args.verify_unichain:
        rep = verify_unichain(sol.policy, model)
        outputs.append(write_json(out / "recurrence.json", rep.to_dict()))
        if rep.n_recurrent != 1 or not rep.reset_in_recurrent:
            raise VerificationError(f"optimal policy has {rep.n_recurrent} recurrent classes")
    return outputs


def _policy_for(args, cfg):
    if args.policy:
        actions, doc = load_policy(args.policy)
        if doc.get("model_hash") != cfg.model_hash():
            raise ConfigError(f"policy {args.policy} does not match this configuration "
                              f"({doc.get('model_hash')} != {cfg.model_hash()})")
        return actions, build_model(cfg)
    model = build_model(cfg)
    return solve_model(model, cfg).policy, model


def cmd_simulate(args, cfg, out):
    kind = cfg.sim["scheduler"]
    policy, model = _policy_for(args, cfg) if kind == "ostb" else (None, None)
    config = sim_config(cfg, scheduler_for(kind, cfg, policy, model))
    reports = simulate_many(config, int(cfg.sim["replications"]), args.threads)
    fmts = cfg.output["formats"]
    outputs = []
    if "csv" in fmts:
        path = out / f"simulate-{kind}.csv"
        reports[0].to_csv(path)
        outputs.append(path)
    summary = {"config_hash": cfg.config_hash(), "scheduler": kind,
               "aggregate": aggregate(reports), "runs": [r.summary() for r in reports]}
    outputs.append(write_json(out / f"simulate-{kind}.json", summary))
    return outputs


def cmd_compare(args, cfg, out):
    kinds = (cfg.sim["scheduler"], cfg.sim["baseline"])
    policy, model = _policy_for(args, cfg) if "ostb" in kinds else (None, None)
    a, b = (sim_config(cfg, scheduler_for(k, cfg, policy, model)) for k in kinds)
    res = compare(a, b, int(cfg.sim["replications"]), args.threads)
    res["config_hash"] = cfg.config_hash()
    outputs = [write_json(out / "compare.json", res)]
    if "csv" in cfg.output["formats"]:
        header = ["metric", "scheduler", "mean", "se"]
        rows = [[metric, k, v["mean"], v["se"]]
                for k in kinds if k in res
                for metric, v in res[k].items() if isinstance(v, dict)]
        outputs += write_table(out / "compare", header, rows, ["csv"])
    return outputs


def cmd_sweep(args, cfg, out):
    fmts = cfg.output["formats"]
    if args.recipe:
        outputs = []
        for name, (header, rows) in run_recipe(args.recipe, cfg, args.threads).items():
            outputs += write_table(out / name, header, rows, fmts)
        return outputs
    sweep = cfg.sweep
    if sweep is None:
        raise ConfigError("sweep needs --recipe or a 'sweep' section in the configuration")
    section, key = check_sweep_variable(sweep["variable"])
    header = ["variable", "value", "scheduler", "completion_rate", "sensing_failures",
              "transmit_failures", "latency_seconds", "model_tasks_per_interval"]
    rows = []
    for value in sweep["values"]:
        point = (cfg.with_overrides(harvest={**cfg.data["harvest"], key: value})
                 if section == "harvest" else cfg.with_overrides(**{section: {key: value}}))
        model = build_model(point)
        sol = solve_model(model, point)
        for kind in sweep["schedulers"]:
            config = sim_config(point, scheduler_for(kind, point, sol.policy, model))
            agg = aggregate(simulate_many(config, int(point.sim["replications"]), args.threads))
            rows.append([sweep["variable"], value, kind, agg["completion_rate"]["mean"],
                         agg["sensing_failures"]["mean"], agg["transmit_failures"]["mean"],
                         agg["latency_seconds"]["mean"], sol.report.tasks_per_interval])
    return write_table(out / "sweep", header, rows, fmts)


def cmd_verify(args, cfg, out):
    """Structural checks: LP/RVI agreement, threshold structure, unichain."""
    model = build_model(cfg)
    sol = solve_model(model, cfg)
    checks = {}
    gap = abs(sol.occupation.objective - sol.rvi.gain)
    checks["lp_rvi_gap"] = {"value": gap, "ok": gap <= 1e-6 * max(1.0, abs(sol.rvi.gain))}
    bad = threshold_violations(sol.policy, model)
    checks["threshold_structure"] = {"violations": [list(b) for b in bad], "ok": not bad}
    n_random = int(cfg.solver["random_policies"])
    policies = [sol.policy] + random_policies(model, n_random, int(cfg.sim["seed"]))
    reports = [verify_unichain(p, model) for p in policies]
    ok = all(r.n_recurrent == 1 and r.reset_in_recurrent for r in reports)
    checks["unichain"] = {"policies": len(reports),
                          "recurrent_classes": sorted({r.n_recurrent for r in reports}),
                          "ok": ok}
    checks["ok"] = all(c["ok"] for c in checks.values())
    path = write_json(out / "verify.json", checks)
    if not checks["ok"]:
        failed = [k for k, c in checks.items() if k != "ok" and not c["ok"]]
        raise VerificationError(f"verification failed: {', '.join(failed)}")
    return [path]


COMMANDS = {"build": cmd_build, "solve": cmd_solve, "simulate": cmd_simulate,
            "compare": cmd_compare, "sweep": cmd_sweep, "verify": cmd_verify}


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration (JSON)")
    common.add_argument("--seed", type=int, help="override sim.seed")
    common.add_argument("--out", help="output directory (default: output.dir)")
    common.add_argument("--format", choices=("csv", "json"), action="append",
                        help="output format; repeat for both (default: output.formats)")
    common.add_argument("--threads", type=int, default=1, help="worker processes")
    common.add_argument("--recipe", choices=sorted(RECIPES), help="reproduction recipe")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ostb", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "solve":
            p.add_argument("--model", help="model file written by build")
            p.add_argument("--verify-unichain", action="store_true")
        if name in ("simulate", "compare"):
            p.add_argument("--policy", help="policy file written by solve")
    return parser


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else None
    if cfg is None:
        if not args.recipe:
            raise ConfigError("--config is required")
        cfg = table_one_config()
    overrides = {}
    if args.seed is not None:
        overrides["sim"] = {"seed": args.seed}
    if args.format:
        overrides["output"] = {"formats": sorted(set(args.format))}
    return cfg.with_overrides(**overrides) if overrides else cfg


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve_config(args)
        out = Path(args.out or cfg.output["dir"])
        out.mkdir(parents=True, exist_ok=True)
        outputs = COMMANDS[args.command](args, cfg, out)
        inputs = [p for p in (args.config, getattr(args, "model", None),
                              getattr(args, "policy", None)) if p]
        write_manifest(out, args.command, cfg, inputs, outputs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except VerificationError as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    for p in outputs:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
