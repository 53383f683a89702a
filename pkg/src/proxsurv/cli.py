"""Command-line front end.

Subcommands ``fit``, ``diagnose`` and ``simulate``. Settings come from a YAML
config (``--config``); any flag given on the command line overrides the
config value.

Exit codes: 0 success, 2 validation error, 3 numerical or identification
error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from .additive_hazards import AHFit
from .data_model import NcoSpec, ProximalDataset, ingest_csv
from .exceptions import EstimationError, IdentificationError, ProxsurvError, SingularDesignError, ValidationError
from .inference import bootstrap_covariance, wald_ci
from .simulation import DEFAULT_BETA_U, DEFAULT_C_U, default_grid, run_study, write_manifest, write_study_csv
from .two_stage import (
    WEAK_PROXY_THRESHOLD,
    fit_first_stages,
    fully_adjusted_fit,
    naive_fit,
    p2sls_fit,
    relevance_diagnostics,
    second_stage_design,
    unadjusted_fit,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

_CONFIG_KEYS = {
    "command", "input", "schema", "ncos", "inference", "output", "manifest", "ci_level",
    "seed", "reps", "n_jobs", "weak_threshold", "grid",
}
_GRID_KEYS = {"n", "reps", "seed", "beta_U", "c_U", "censor_time", "ncos"}


@dataclass
class RunConfig:
    command: str
    input: Path | None = None
    schema: dict = field(default_factory=dict)
    nco_specs: tuple[NcoSpec, ...] = ()
    inference: str = "sandwich"
    reps: int | None = None
    seed: int = 0
    output: Path | None = None
    manifest: Path | None = None
    ci_level: float = 0.95
    n_jobs: int = 1
    weak_threshold: float = WEAK_PROXY_THRESHOLD
    grid: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in ("fit", "diagnose", "simulate"):
            raise ValidationError(f"unknown command {self.command!r}")
        if not 0 < self.ci_level < 1:
            raise ValidationError(f"ci_level must lie in (0, 1), got {self.ci_level}")
        if self.inference not in ("sandwich", "bootstrap"):
            raise ValidationError(f"inference must be 'sandwich' or 'bootstrap', got {self.inference!r}")
        if self.reps is not None and self.reps < 1:
            raise ValidationError("reps must be positive")
        if self.command in ("fit", "diagnose"):
            if self.input is None:
                raise ValidationError(f"{self.command} requires an input CSV")
            if not self.schema:
                raise ValidationError(f"{self.command} requires a schema")
        if self.command == "simulate" and self.output is None:
            raise ValidationError("simulate requires --output")
        if self.inference == "bootstrap" and self.reps is not None and self.reps < 2:
            raise ValidationError("bootstrap needs at least 2 replicates")


def load_config(path) -> dict:
    with open(path) as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ValidationError(f"cannot parse config {path}: {exc}") from exc
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ValidationError(f"config {path} must be a mapping at top level")
    unknown = set(doc) - _CONFIG_KEYS
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    return doc


def _inference_from(value) -> tuple[str, dict]:
    """Accepts ``"sandwich"``, ``"bootstrap"`` or ``{method: bootstrap, reps, seed}``."""
    if value is None:
        return "sandwich", {}
    if isinstance(value, str):
        return value, {}
    if isinstance(value, dict):
        extra = {k: value[k] for k in ("reps", "seed") if k in value}
        return value.get("method", "sandwich"), extra
    raise ValidationError(f"cannot interpret inference setting {value!r}")


def build_run_config(args: argparse.Namespace) -> RunConfig:
    doc = load_config(args.config) if args.config else {}
    if doc.get("command") not in (None, args.command):
        raise ValidationError(f"config is for {doc['command']!r}, not {args.command!r}")
    method, inf_extra = _inference_from(doc.get("inference"))
    merged: dict[str, Any] = {
        "input": doc.get("input"),
        "output": doc.get("output"),
        "manifest": doc.get("manifest"),
        "ci_level": doc.get("ci_level", 0.95),
        "seed": inf_extra.get("seed", doc.get("seed", 0)),
        "reps": inf_extra.get("reps", doc.get("reps")),
        "n_jobs": doc.get("n_jobs", 1),
        "weak_threshold": doc.get("weak_threshold", WEAK_PROXY_THRESHOLD),
        "inference": method,
    }
    for key in ("input", "output", "manifest", "ci_level", "seed", "reps", "n_jobs", "inference"):
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    grid = dict(doc.get("grid") or {})
    unknown = set(grid) - _GRID_KEYS
    if unknown:
        raise ValidationError(f"unknown grid keys: {sorted(unknown)}")
    if args.command == "simulate":
        for key, attr in (("n", "n"), ("beta_U", "beta_u"), ("c_U", "c_u"), ("ncos", "ncos"),
                          ("seed", "seed"), ("reps", "reps")):
            value = getattr(args, attr, None)
            if value is not None:
                grid[key] = value
    ncos = doc.get("ncos") or []
    if not isinstance(ncos, list):
        raise ValidationError("ncos must be a list of mappings")
    try:
        specs = tuple(NcoSpec.from_mapping(m) for m in ncos)
    except TypeError as exc:
        raise ValidationError(f"invalid NCO declaration: {exc}") from exc
    # relative paths in a config file are relative to that file
    base = Path(args.config).parent if args.config else Path(".")

    def from_doc(key):
        value = getattr(args, key, None)
        if value is not None:
            return Path(value)
        if merged[key] is None:
            return None
        p = Path(merged[key])
        return p if p.is_absolute() else base / p

    input_path, output_path, manifest_path = from_doc("input"), from_doc("output"), from_doc("manifest")
    return RunConfig(
        command=args.command,
        input=input_path,
        schema=dict(doc.get("schema") or {}),
        nco_specs=specs,
        inference=merged["inference"],
        reps=None if merged["reps"] is None else int(merged["reps"]),
        seed=int(merged["seed"]),
        output=output_path,
        manifest=manifest_path,
        ci_level=float(merged["ci_level"]),
        n_jobs=int(merged["n_jobs"]),
        weak_threshold=float(merged["weak_threshold"]),
        grid=grid,
    )


def _clean(x):
    """Recursively convert numpy scalars/arrays and non-finite floats for JSON."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if np.isfinite(x) else None
    return x


def _estimates(names, est, cov, level) -> list[dict]:
    se = np.sqrt(np.diag(cov))
    lo, hi = wald_ci(est, se**2, level)
    return [
        {"term": n, "estimate": e, "se": s, "ci_lower": a, "ci_upper": b}
        for n, e, s, a, b in zip(names, est, se, lo, hi)
    ]


def _ah_summary(fit: AHFit, n_exposures: int, level: float) -> dict:
    cov = fit.covariance()
    idx = slice(0, n_exposures)
    return {
        "beta_A": _estimates(fit.column_names[idx], fit.beta[idx], cov[idx, idx], level),
        "baseline": {"knots": fit.baseline.knots, "values": fit.baseline.values},
        "covariance": {"param_names": list(fit.column_names), "matrix": cov},
        "n_events": fit.n_events,
    }


def fit_document(ds: ProximalDataset, cfg: RunConfig) -> dict:
    """The ``fit`` result document, before JSON serialization."""
    level = cfg.ci_level
    boot = cfg.inference == "bootstrap"
    fit = p2sls_fit(ds, covariance=not boot, weak_threshold=cfg.weak_threshold)
    inference: dict[str, Any] = {"method": cfg.inference}
    if boot:
        reps = cfg.reps if cfg.reps is not None else 500
        res = bootstrap_covariance(ds, reps, cfg.seed, n_jobs=cfg.n_jobs)
        cov = res.covariance
        inference.update({"reps": reps, "seed": cfg.seed, "failures": res.failures})
    else:
        cov = fit.covariance
    idx = fit.beta_A_index
    p2sls = {
        "beta_A": _estimates(ds.a_names, fit.beta_A, cov[np.ix_(idx, idx)], level),
        "baseline": {"knots": fit.baseline.knots, "values": fit.baseline.values},
        "covariance": {"param_names": list(fit.param_names), "matrix": cov},
        "n_events": fit.second_stage.n_events,
    }
    p = ds.p_A
    methods = {
        "p2sls": p2sls,
        "unadjusted": _ah_summary(unadjusted_fit(ds), p, level),
        "adjusted_x": _ah_summary(naive_fit(ds), p, level),
        "adjusted_xzw": _ah_summary(fully_adjusted_fit(ds), p, level),
    }
    return {
        "n": ds.n,
        "ci_level": level,
        "inference": inference,
        "comparator_inference": "robust",
        "methods": methods,
        "diagnostics": fit.diagnostics.to_dict(),
    }


def diagnose_document(ds: ProximalDataset, cfg: RunConfig) -> dict:
    """Relevance report plus negative fitted-hazard counts of the second stage.

    A second stage that cannot be fitted is reported (``identified: false``)
    rather than raised, since that is itself the diagnosis.
    """
    try:
        fit = p2sls_fit(ds, covariance=False, weak_threshold=cfg.weak_threshold)
    except IdentificationError as exc:
        stages = fit_first_stages(ds)
        S, _ = second_stage_design(ds, stages)
        report = relevance_diagnostics(stages, threshold=cfg.weak_threshold, design=S)
        return {
            "n": ds.n,
            "identified": False,
            "message": str(exc),
            "dependent_columns": exc.dependent_columns,
            "relevance": report.to_dict(),
        }
    return {
        "n": ds.n,
        "identified": True,
        "relevance": fit.diagnostics.to_dict(),
        "negative_hazard": fit.second_stage.negative_hazard_counts(),
    }


def _write_json(doc: dict, path: Path | None) -> None:
    text = json.dumps(_clean(doc), indent=2, sort_keys=False, allow_nan=False) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def cmd_fit(cfg: RunConfig) -> dict:
    ds = ingest_csv(cfg.input, cfg.schema, cfg.nco_specs)
    doc = fit_document(ds, cfg)
    _write_json(doc, cfg.output)
    return doc


def cmd_diagnose(cfg: RunConfig) -> dict:
    ds = ingest_csv(cfg.input, cfg.schema, cfg.nco_specs)
    doc = diagnose_document(ds, cfg)
    _write_json(doc, cfg.output)
    return doc


def cmd_simulate(cfg: RunConfig) -> list:
    g = cfg.grid
    grid = default_grid(
        n=int(g.get("n", 1000)),
        reps=int(g.get("reps", cfg.reps if cfg.reps is not None else 1000)),
        seed=int(g.get("seed", cfg.seed)),
        beta_U=[float(b) for b in g.get("beta_U", DEFAULT_BETA_U)],
        c_U=[float(c) for c in g.get("c_U", DEFAULT_C_U)],
        censor_time=float(g.get("censor_time", 5.0)),
        ncos=tuple(g.get("ncos", ("w1", "w2"))),
    )
    results = run_study(grid, n_jobs=cfg.n_jobs, level=cfg.ci_level)
    cfg.output.parent.mkdir(parents=True, exist_ok=True)
    write_study_csv(results, cfg.output)
    manifest = cfg.manifest or cfg.output.with_suffix(".manifest.json")
    write_manifest(results, manifest, level=cfg.ci_level,
                   extra={"seed": grid[0].seed, "output": cfg.output.name})
    return results


COMMANDS = {"fit": cmd_fit, "diagnose": cmd_diagnose, "simulate": cmd_simulate}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="proxsurv",
        description="Proximal two-stage estimation for additive hazards models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--output", type=Path, help="output path (JSON for fit/diagnose, CSV for simulate)")
        p.add_argument("--seed", type=int)
        p.add_argument("--reps", type=int, help="bootstrap replicates (fit) or Monte Carlo replicates (simulate)")
        p.add_argument("--ci-level", dest="ci_level", type=float)
        p.add_argument("--n-jobs", dest="n_jobs", type=int)

    for name, help_ in (("fit", "fit P2SLS and the comparators on a CSV"),
                        ("diagnose", "weak-proxy and negative-hazard diagnostics")):
        p = sub.add_parser(name, help=help_)
        common(p)
        p.add_argument("--input", type=Path, help="input CSV")
        p.add_argument("--inference", choices=("sandwich", "bootstrap"))

    p = sub.add_parser("simulate", help="run the Monte Carlo study")
    common(p)
    p.add_argument("--manifest", type=Path, help="manifest path (default: <output>.manifest.json)")
    p.add_argument("--n", type=int, help="subjects per replicate")
    p.add_argument("--beta-u", dest="beta_u", type=float, nargs="+")
    p.add_argument("--c-u", dest="c_u", type=float, nargs="+")
    p.add_argument("--ncos", nargs="+", choices=("w1", "w2"))
    return parser


def _fail(exc: BaseException, code: int) -> int:
    doc: dict[str, Any] = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if isinstance(exc, SingularDesignError) and exc.dependent_columns:
        doc["dependent_columns"] = exc.dependent_columns
    if isinstance(exc, ValidationError) and exc.violations:
        doc["violations"] = [str(v) for v in exc.violations]
    sys.stderr.write(json.dumps(doc) + "\n")
    return code


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = build_run_config(args)
        COMMANDS[cfg.command](cfg)
    except ValidationError as exc:
        return _fail(exc, EXIT_VALIDATION)
    except EstimationError as exc:
        return _fail(exc, EXIT_NUMERICAL)
    except OSError as exc:
        return _fail(exc, EXIT_IO)
    except ProxsurvError as exc:
        return _fail(exc, EXIT_NUMERICAL)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
