"""Command-line interface: ``wproj <command> [options]``.

Every run writes into a fresh directory ``<out>/<command>-<config hash>-<timestamp>``.
Artifacts are assembled in a hidden temporary directory and renamed into
place only when complete; on failure the run directory holds nothing but a
``FAILED`` marker with the error message.

Exit status: 0 on success, 1 on input or configuration errors, 2 when a
solver did not converge (artifacts are still written).
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import os
import shutil
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import config as C
from .errors import ConfigError, NotConvergedWarning, WProjError
from .measures import CsvSchema, load_csv, load_image, read_image, render_image, to_csv, write_image, from_samples
from .ot import brute_force_assignment, solve_exact
from .projection import ProjectOptions, ProjectionResult, project, variational_inequality_check
from .simulate import GaussianStudy, MixtureStudy, make_rng, run_study, sample_gaussians, sample_mixtures

log = logging.getLogger("wproj")

EXIT_OK, EXIT_INPUT, EXIT_NOT_CONVERGED = 0, 1, 2
PATH_KEYS = {
    "project": ("target", "controls", "out"),
    "image-project": ("target_image", "control_images", "out"),
    "synth": ("data_dir", "out"),
}


class RunDir:
    """Atomic run directory: a temp dir renamed into place on success."""

    def __init__(self, parent, command: str, digest: str):
        stamp = _dt.datetime.now().strftime("%Y%m%dT%H%M%S%f")
        self.parent = Path(parent)
        self.final = self.parent / f"{command}-{digest}-{stamp}"
        self.tmp = self.parent / f".{self.final.name}.tmp"

    def __enter__(self) -> Path:
        self.parent.mkdir(parents=True, exist_ok=True)
        self.tmp.mkdir()
        return self.tmp

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            os.replace(self.tmp, self.final)
            return False
        shutil.rmtree(self.tmp, ignore_errors=True)
        self.final.mkdir(exist_ok=True)
        (self.final / "FAILED").write_text(f"{exc_type.__name__}: {exc}\n")
        return False


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _resolve_paths(cfg: dict, base: Path, command: str) -> dict:
    """Make path-valued entries absolute relative to ``base``."""

    def fix(v):
        if isinstance(v, str):
            return str((base / v).resolve()) if not os.path.isabs(v) else v
        if isinstance(v, dict) and "path" in v:
            return {**v, "path": fix(v["path"])}
        if isinstance(v, list):
            return [fix(x) for x in v]
        return v

    keys = PATH_KEYS.get(command, ("out",))
    return {k: (fix(v) if k in keys else v) for k, v in cfg.items()}


def _threads(cfg: dict) -> int:
    t = cfg["solver"].get("threads")
    if t is not None:
        return int(t)
    env = os.environ.get("WPROJ_THREADS")
    if env:
        try:
            t = int(env)
        except ValueError:
            raise ConfigError(f"WPROJ_THREADS must be a positive integer, got {env!r}") from None
        if t < 1:
            raise ConfigError(f"WPROJ_THREADS must be a positive integer, got {env!r}")
        return t
    return 1


def project_options(cfg: dict, n0: int) -> ProjectOptions:
    s = cfg["solver"]
    return ProjectOptions(
        method=s["method"],
        epsilon=s["epsilon"],
        epsilon_scale=s["epsilon_scale"],
        sinkhorn_tol=s["tol"] / n0,
        sinkhorn_max_iter=s["max_iter"],
        sinkhorn_relaxation=s["relaxation"],
        sinkhorn_float32=s["float32"],
        qp_tol=s["qp_tol"],
        qp_max_iter=s["qp_max_iter"],
        threads=_threads(cfg),
        size_budget=s["size_budget"],
        keep_plans=cfg.get("dump_plans", False),
    )


def _schema_for(src, cfg: dict) -> tuple[str, CsvSchema]:
    """CSV schema for a measure source; columns default to the file header minus ``weight``."""
    if isinstance(src, str):
        src = {"path": src}
    path = src["path"]
    columns = src.get("columns") or cfg.get("columns")
    weight = src.get("weight_column", cfg.get("weight_column"))
    transforms = src.get("transforms", cfg.get("transforms") or {})
    if not columns:
        try:
            with open(path, newline="", encoding="utf-8") as fh:
                header = next(csv.reader(fh), [])
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from None
        header = [h.strip() for h in header]
        if weight is None and "weight" in header:
            weight = "weight"
        columns = [h for h in header if h != weight]
    return path, CsvSchema(tuple(columns), weight, dict(transforms))


def _result_payload(res: ProjectionResult, cfg: dict, digest: str) -> dict:
    out = res.to_dict(seed=cfg.get("seed"))
    out["config_hash"] = digest
    return out


def _diagnostics(command: str, res: ProjectionResult, fields_p0, elapsed: float, extra=None) -> dict:
    G = res.gram.unscaled()
    tol = 1e-6 * float(np.trace(G)) if np.trace(G) > 0 else 1e-12
    vi = variational_inequality_check(fields_p0, res.fields, res.lam, tol)
    d = {
        "command": command,
        "converged": bool(res.converged),
        "ot_converged": bool(res.ot_converged),
        "kkt_gap": float(res.kkt_gap),
        "objective": float(res.objective),
        "unique": bool(res.unique),
        "gram": G.tolist(),
        "gram_scale": float(res.gram.scale),
        "vi_max_slack": vi.max_slack,
        "vi_passed": vi.passed,
        "elapsed_seconds": round(elapsed, 3),
    }
    if extra:
        d.update(extra)
    return d


def _dump_plans(outdir: Path, res: ProjectionResult) -> None:
    for j, plan in enumerate(res.plans or []):
        np.save(outdir / f"plan_{j}.npy", plan.coupling)


def _status(res: ProjectionResult) -> int:
    return EXIT_OK if res.converged and res.ot_converged else EXIT_NOT_CONVERGED


# -- commands -----------------------------------------------------------------


def cmd_project(cfg: dict, outdir: Path, digest: str) -> int:
    t0 = time.perf_counter()
    tpath, tschema = _schema_for(cfg["target"], cfg)
    target = load_csv(tpath, tschema)
    controls = []
    for src in cfg["controls"]:
        path, schema = _schema_for(src, cfg)
        controls.append(load_csv(path, schema))
    res = project(target, controls, project_options(cfg, target.n))
    _write_json(outdir / "weights.json", _result_payload(res, cfg, digest))
    to_csv(res.projected, outdir / "projected.csv", list(tschema.columns))
    _write_json(outdir / "diagnostics.json", _diagnostics("project", res, target, time.perf_counter() - t0))
    if cfg["dump_plans"]:
        _dump_plans(outdir, res)
    return _status(res)


def _write_mean_table(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: (v if isinstance(v, str) else repr(v)) for k, v in r.items()})


def _cmd_simulate(cfg: dict, outdir: Path, digest: str, mixture: bool) -> int:
    t0 = time.perf_counter()
    common = dict(d=cfg["d"], means=cfg["means"], rho=cfg["rho"], var=cfg["var"], cov=cfg["cov"], n=cfg["n"], seed=cfg["seed"])
    if mixture:
        study = MixtureStudy(**common, coefficients=cfg["coefficients"])
        measures = sample_mixtures(study)
    else:
        study = GaussianStudy(**common)
        measures = sample_gaussians(study)
    n0 = cfg["fit_size"] or cfg["n"]
    sr = run_study(measures, project_options(cfg, min(n0, cfg["n"])), fit_size=cfg["fit_size"], seed=cfg["seed"])
    res = sr.result
    _write_json(outdir / "weights.json", _result_payload(res, cfg, digest))
    _write_mean_table(outdir / "means.csv", sr.mean_table())
    name = "simulate-mixture" if mixture else "simulate-gaussian"
    extra = {
        "target_mean": sr.target_mean.tolist(),
        "weighted_control_mean": sr.weighted_mean.tolist(),
        "max_abs_mean_gap": float(np.abs(sr.target_mean - sr.weighted_mean).max()),
    }
    _write_json(outdir / "diagnostics.json", _diagnostics(name, res, res.fields[0].base, time.perf_counter() - t0, extra))
    if cfg["dump_plans"]:
        _dump_plans(outdir, res)
    return _status(res)


def cmd_simulate_gaussian(cfg, outdir, digest):
    return _cmd_simulate(cfg, outdir, digest, mixture=False)


def cmd_simulate_mixture(cfg, outdir, digest):
    return _cmd_simulate(cfg, outdir, digest, mixture=True)


def cmd_image_project(cfg: dict, outdir: Path, digest: str) -> int:
    t0 = time.perf_counter()
    kw = dict(invert=cfg["invert"], downsample=cfg["downsample"])
    grid = read_image(cfg["target_image"], **kw)
    target = load_image(cfg["target_image"], **kw)
    controls = [load_image(p, **kw) for p in cfg["control_images"]]
    res = project(target, controls, project_options(cfg, target.n))
    _write_json(outdir / "weights.json", _result_payload(res, cfg, digest))
    write_image(render_image(res.projected, grid.shape), outdir / "projected.png")
    _write_json(outdir / "diagnostics.json", _diagnostics("image-project", res, target, time.perf_counter() - t0))
    if cfg["dump_plans"]:
        _dump_plans(outdir, res)
    return _status(res)


def cmd_synth(cfg: dict, outdir: Path, digest: str) -> int:
    from . import synthctl as S

    t0 = time.perf_counter()
    keys = ("treated", "controls", "pre_periods", "post_periods", "variables", "transforms",
            "weight_column", "fit_sample_size", "data_dir", "file_pattern", "files", "time_mode", "jitter")
    panel_cfg = S.PanelConfig(seed=cfg["seed"], threads=_threads(cfg), **{k: cfg[k] for k in keys})
    panels = S.load_panel(panel_cfg)
    S.require_complete(panel_cfg, panels)
    n0 = sum(panels[panel_cfg.treated].periods[t].n for t in panel_cfg.pre_periods)
    if panel_cfg.fit_sample_size:
        n0 = min(n0, panel_cfg.fit_sample_size)
    res = S.fit(panel_cfg, panels, project_options(cfg, n0))
    cfs = S.counterfactuals(panel_cfg, panels, res.lam, w2_budget=cfg["w2_budget"])
    trend = S.pretrend_check(panel_cfg, panels, res.lam, w2_budget=cfg["w2_budget"],
                             flag_sd=cfg["flag_sd"], flag_ks=cfg["flag_ks"])
    payload = _result_payload(res, cfg, digest)
    _write_json(outdir / "weights.json", payload)
    S.write_counterfactuals(outdir, cfs)
    _write_json(outdir / "pretrend.json", S.pretrend_to_dict(trend))
    extra = {
        "controls": list(panel_cfg.controls),
        "post_mean_diff": {e.period: e.mean_diff for e in cfs},
        "post_ks": {e.period: e.ks for e in cfs},
    }
    _write_json(outdir / "diagnostics.json", _diagnostics("synth", res, res.fields[0].base, time.perf_counter() - t0, extra))
    if cfg["dump_plans"]:
        _dump_plans(outdir, res)
    return _status(res)


def oracle_check(instances: int = 200, max_n: int = 7, max_d: int = 4, seed: int = 0, rtol: float = 1e-9) -> dict:
    """Exact solver vs permutation enumeration on random uniform instances."""
    rng = make_rng(seed, 3)
    worst, failures = 0.0, 0
    for _ in range(instances):
        n = int(rng.integers(1, max_n + 1))
        d = int(rng.integers(1, max_d + 1))
        a = from_samples(rng.standard_normal((n, d)))
        b = from_samples(rng.standard_normal((n, d)) * rng.uniform(0.5, 2.0) + rng.uniform(-1, 1, d))
        exact = solve_exact(a, b).cost
        oracle = brute_force_assignment(a, b).cost
        err = abs(exact - oracle) / max(abs(oracle), 1e-300)
        worst = max(worst, err)
        failures += err > rtol
    return {"instances": instances, "failures": failures, "max_rel_error": worst, "passed": failures == 0}


def cmd_oracle_check(cfg: dict, outdir: Path, digest: str) -> int:
    rep = oracle_check(cfg["instances"], cfg["max_n"], cfg["max_d"], cfg["seed"], cfg["rtol"])
    _write_json(outdir / "oracle.json", rep)
    print(f"oracle-check: {rep['instances']} instances, {rep['failures']} failures, "
          f"max relative error {rep['max_rel_error']:.3g}")
    return EXIT_OK if rep["passed"] else EXIT_NOT_CONVERGED


COMMANDS = {
    "project": cmd_project,
    "synth": cmd_synth,
    "simulate-gaussian": cmd_simulate_gaussian,
    "simulate-mixture": cmd_simulate_mixture,
    "image-project": cmd_image_project,
    "oracle-check": cmd_oracle_check,
}

HELP = {
    "project": "project a target CSV measure onto control CSV measures",
    "synth": "distributional synthetic controls on a CSV panel",
    "simulate-gaussian": "Gaussian simulation study",
    "simulate-mixture": "Gaussian-mixture simulation study",
    "image-project": "project a target image onto control images",
    "oracle-check": "compare the exact solver with brute-force enumeration",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--config", help="YAML or JSON run configuration")
    g.add_argument("--out", help="parent directory for run directories (default: runs)")
    g.add_argument("--seed", type=int, help="random seed (nonnegative integer)")
    g.add_argument("--solver", choices=["exact", "entropic"], help="optimal transport solver")
    g.add_argument("--epsilon", type=float, help="entropic regularization (absolute)")
    g.add_argument("--threads", type=int, help="parallel OT solves (fallback: WPROJ_THREADS)")
    g.add_argument("--dump-plans", action="store_true", default=None, help="save transport plans as .npy")
    g.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="wproj", description="Tangential Wasserstein projections.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common], help=HELP[name], description=HELP[name])
        if name == "project":
            p.add_argument("--target", help="target CSV")
            p.add_argument("--controls", nargs="+", help="control CSVs")
            p.add_argument("--columns", nargs="+", help="outcome columns (default: header minus 'weight')")
        elif name.startswith("simulate"):
            p.add_argument("--n", type=int, help="sample size per measure")
            p.add_argument("--fit-size", type=int, help="subsample size used for the fit")
        elif name == "image-project":
            p.add_argument("--target-image")
            p.add_argument("--control-images", nargs="+")
            p.add_argument("--downsample", type=int)
        elif name == "oracle-check":
            p.add_argument("--instances", type=int)
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    """Config file, then command-line overrides, validated with defaults filled."""
    cfg: dict = {}
    if args.config:
        cfg = C.load_config_file(args.config)
        cfg = _resolve_paths(cfg, Path(args.config).resolve().parent, args.command)
    overrides = {
        "out": args.out, "seed": args.seed, "dump_plans": args.dump_plans,
        "target": getattr(args, "target", None), "controls": getattr(args, "controls", None),
        "columns": getattr(args, "columns", None), "n": getattr(args, "n", None),
        "fit_size": getattr(args, "fit_size", None),
        "target_image": getattr(args, "target_image", None),
        "control_images": getattr(args, "control_images", None),
        "downsample": getattr(args, "downsample", None),
        "instances": getattr(args, "instances", None),
    }
    cli = _resolve_paths({k: v for k, v in overrides.items() if v is not None}, Path.cwd(), args.command)
    cfg.update(cli)
    solver = dict(cfg.get("solver") or {})
    for key, val in (("method", args.solver), ("epsilon", args.epsilon), ("threads", args.threads)):
        if val is not None:
            solver[key] = val
    if solver or "solver" in cfg:
        cfg["solver"] = solver
    return C.validate(cfg, C.COMMAND_SCHEMAS[args.command], what=f"{args.command} config")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except WProjError as exc:
        print(f"wproj {args.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    digest = C.config_hash({"command": args.command, **cfg})
    run = RunDir(cfg["out"], args.command, digest)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always", NotConvergedWarning)
            with run as outdir:
                _write_json(outdir / "config.json", {"command": args.command, "config_hash": digest, **cfg})
                status = COMMANDS[args.command](cfg, outdir, digest)
    except (WProjError, OSError, ValueError, KeyError, MemoryError) as exc:
        print(f"wproj {args.command}: {exc}", file=sys.stderr)
        print(str(run.final))
        return EXIT_INPUT
    print(str(run.final))
    if status == EXIT_NOT_CONVERGED:
        print(f"wproj {args.command}: a solver did not converge; results written anyway", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
