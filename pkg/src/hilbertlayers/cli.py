"""Command line: hilbertlayers {coefficients,knudsen,expand,converge,diagnose}.

Exit codes: 0 all checks pass, 1 a check failed, 2 usage/configuration/input error.
"""

import argparse
import hashlib
import logging
import os
import sys
from dataclasses import replace

from . import config as cf
from . import expansion as ex
from . import knudsen as kn
from . import pipeline as pl
from .io import ContainerError, file_hash, read_container, read_manifest, write_container, write_csv, write_json, write_manifest

log = logging.getLogger("hilbertlayers")


class UsageError(Exception):
    pass


def _config_hash(cfg):
    return hashlib.sha256(cf.dumps(cfg).encode()).hexdigest()


def _load(args):
    cfg = cf.load(args.config) if args.config else cf.RunConfig()
    if args.seed is not None:
        cfg = replace(cfg, output=replace(cfg.output, seed=args.seed))
    out = args.out or cfg.output.dir
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config.toml"), "w") as fh:
        fh.write(cf.dumps(cfg))
    return cfg, out


def _finish(out, stage, summary, outputs, cfg):
    write_json(os.path.join(out, f"{stage}.json"), summary)
    write_manifest(out, stage, {"config.toml": os.path.join(out, "config.toml")}, [f"{stage}.json", *outputs], _config_hash(cfg))
    ok = all(summary.get("checks", {}).values())
    print(f"{stage}: {'PASS' if ok else 'FAIL'}")
    for name, passed in summary.get("checks", {}).items():
        print(f"  {name}: {'pass' if passed else 'FAIL'}")
    return 0 if ok else 1


def cmd_coefficients(args):
    cfg, out = _load(args)
    ctx = pl.make_context(cfg)
    summary = pl.coefficients(ctx, seed=cfg.output.seed)
    print(f"kappa1 = {summary['kappa1']:.17g}  kappa2 = {summary['kappa2']:.17g}  c0 = {summary['c0']:.17g}")
    return _finish(out, "coefficients", summary, [], cfg)


def cmd_knudsen(args):
    cfg, out = _load(args)
    ctx = pl.make_context(cfg)
    alphas = sorted({cfg.study.alpha, 1.0}, reverse=True)
    reports = {f"alpha={a:g}": pl.knudsen_report(ctx, a) for a in alphas}
    outputs = []
    for name, sol in ctx.slip(cfg.study.alpha)[1].items():
        fname = f"layer_{name}.csv"
        kn.export_profiles(sol, os.path.join(out, fname))
        outputs.append(fname)
    rows = [[r["alpha"], r["b1"], r["c1"]] for r in reports.values()]
    write_csv(os.path.join(out, "slip.csv"), ["alpha", "b1", "c1"], rows)
    checks = {}
    for key, r in reports.items():
        checks.update({f"{key}:{c}": v for c, v in r.pop("checks").items()})
        print(f"{key}: b1 = {r['b1']:.17g}  c1 = {r['c1']:.17g}")
    return _finish(out, "knudsen", {"reports": reports, "checks": checks}, ["slip.csv", *outputs], cfg)


def cmd_expand(args):
    cfg, out = _load(args)
    ctx = pl.make_context(cfg)
    try:
        hier = pl.build_hierarchy(ctx)
        ansatz = pl.build_composite(ctx, hier)
    except (ValueError, kn.KnudsenError) as exc:
        print(f"expand: hierarchy failed: {exc}", file=sys.stderr)
        return 1
    write_container(
        os.path.join(out, "terms.bin"),
        pl.hierarchy_arrays(hier, ansatz),
        {"K": hier.K, "kappa1": hier.kappa.kappa1, "kappa2": hier.kappa.kappa2, "config_hash": _config_hash(cfg)},
    )
    diag = pl.hierarchy_diagnostics(hier)
    diag["K"] = hier.K
    diag["exponents"] = [str(e) for e in ansatz.plan.exponents]
    return _finish(out, "expand", diag, ["terms.bin"], cfg)


def _check_provenance(out, cfg):
    try:
        man = read_manifest(out, "expand")
    except FileNotFoundError:
        raise UsageError(f"no expanded terms in {out}; run 'expand' first") from None
    if man["config_hash"] != _config_hash(cfg):
        raise UsageError("expanded terms were produced with a different configuration")
    path = os.path.join(out, "terms.bin")
    if not os.path.exists(path) or file_hash(path) != man["outputs"].get("terms.bin"):
        raise UsageError("terms.bin does not match its manifest")


def cmd_converge(args):
    cfg, out = _load(args)
    eps_list = list(cfg.study.epsilons if args.mode == "residual" else cfg.study.reference_epsilons)
    if len(eps_list) < 3:
        raise UsageError(f"convergence needs at least 3 epsilon values, got {len(eps_list)}")
    _check_provenance(out, cfg)
    ctx = pl.make_context(cfg)
    hier = pl.build_hierarchy(ctx)
    ansatz = pl.build_composite(ctx, hier)
    reps = {r.eps: r for r in pl.residual_sweep(ctx, ansatz, eps_list)}
    summary = {"mode": args.mode, "K": hier.K, "checks": {}}
    rows = []
    if args.mode == "full":
        runs = pl.remainder_sweep(ctx, ansatz, eps_list, jobs=args.jobs)
        good = [r for r in runs if "error" not in r]
        summary["excluded"] = [r for r in runs if "error" in r]
        for r in runs:
            rep = reps[r["eps"]]
            rows.append([r["eps"], rep.norm, r.get("remainder_norm", float("nan")), rep.bc_defect])
        if len(good) >= 3:
            s, se, ci = pl.slope_interval([r["eps"] for r in good], [r["remainder_norm"] for r in good])
            summary["remainder_slope"] = {"slope": s, "stderr": se, "ci95": list(ci)}
            summary["checks"]["remainder_slope"] = s >= cfg.tolerances.remainder_slope
        else:
            summary["checks"]["remainder_slope"] = False
        summary["runs"] = good
    else:
        rows = [[e, reps[e].norm, float("nan"), reps[e].bc_defect] for e in eps_list]
    s, se, ci = pl.slope_interval(eps_list, [reps[e].norm for e in eps_list])
    target = ex.expected_residual_slope(hier.K)
    summary["residual_slope"] = {"slope": s, "stderr": se, "ci95": list(ci), "target": target}
    summary["checks"]["residual_slope"] = abs(s - target) <= cfg.tolerances.residual_slope
    summary["min_F"] = min(r.min_F for r in reps.values())
    write_csv(os.path.join(out, "convergence.csv"), ["eps", "residual_norm", "remainder_norm", "bc_defect"], rows)
    return _finish(out, "converge", summary, ["convergence.csv"], cfg)


def cmd_diagnose(args):
    if not args.input:
        raise UsageError("diagnose needs --input PATH (a state container)")
    try:
        arrays, meta = read_container(args.input)
        report = pl.diagnose(arrays, meta)
    except (ContainerError, ValueError, KeyError) as exc:
        print(f"diagnose: {exc}", file=sys.stderr)
        return 2
    out = args.out or os.path.dirname(os.path.abspath(args.input))
    os.makedirs(out, exist_ok=True)
    write_json(os.path.join(out, "diagnose.json"), report)
    write_manifest(out, "diagnose", {"input": args.input}, ["diagnose.json"], meta.get("config_hash", ""))
    ok = all(report["checks"].values())
    for k, v in report.items():
        if k != "checks":
            print(f"{k} = {v:.17g}")
    print(f"diagnose: {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


COMMANDS = {
    "coefficients": cmd_coefficients,
    "knudsen": cmd_knudsen,
    "expand": cmd_expand,
    "converge": cmd_converge,
    "diagnose": cmd_diagnose,
}


def build_parser():
    p = argparse.ArgumentParser(prog="hilbertlayers", description="Hilbert expansion with viscous and Knudsen layers")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="TOML run configuration")
        s.add_argument("--out", help="output directory")
        s.add_argument("--jobs", type=int, default=1)
        s.add_argument("--seed", type=int, default=None)
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "converge":
            s.add_argument("--mode", choices=("residual", "full"), default="residual")
        if name == "diagnose":
            s.add_argument("--input", help="state container to diagnose")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s %(message)s")
    if args.jobs < 1:
        print("--jobs must be >= 1", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](args)
    except (cf.ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
