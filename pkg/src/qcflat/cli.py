"""Command-line driver: curvature dumps, flatness scans, QC and
Beltrami checks, and jet cross-validation.

Surface specs and map specs are JSON files (schemas in the README).
Every run writes a machine-readable JSON report and prints a short text
summary.  Exit codes: 0 for a completed analysis (whatever the
mathematical verdict), 2 for input errors, 3 for numerical failures.
The verdict lives in the report, not the exit code, so pipelines can
tell tool failure from mathematical outcome.

Reports are byte-identical for identical config and seed; wall-clock
timing therefore goes to the text summary while the JSON carries a
fixed 0 in the elapsed_ms slot.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import __version__
from . import expr as xp
from .curvature import InvariantViolation, SurfaceAnalyzer, verify_pack
from .flatness import (
    DEFAULT_TOL_ANALYTIC,
    DEFAULT_TOL_FD,
    GridSampler,
    RandomSampler,
    ScanError,
    grid_scan,
)
from .jets import (
    BUILTIN_KINDS,
    DomainError,
    SurfaceSpec,
    inside,
    jet_provider,
    validate_jet,
)
from .qc import (
    MetricNotSPDError,
    SmoothMap,
    beltrami_residual,
    compose_check,
    cylinder_unroll,
    expr_vector_map,
    graph_embedding,
    identity_map,
    induced_metric_field,
    qc_check_map,
    similarity_map,
)

__all__ = ["InputError", "NumericalError", "RunConfig", "load_spec", "run", "main"]

COMMANDS = ("curvature", "flatness", "qc", "beltrami", "validate")


class InputError(ValueError):
    """Bad file, schema, expression or argument (exit code 2)."""


class NumericalError(RuntimeError):
    """The analysis could not be completed numerically (exit code 3)."""


@dataclass
class RunConfig:
    command: str
    spec_path: str
    out_path: str
    count: int = 100
    seed: int = 0
    grid: Optional[tuple] = None
    criterion: Optional[str] = None
    tol: Optional[float] = None
    mode: str = "analytic"
    at: Optional[tuple] = None
    order: int = 2
    echo: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# JSON input

def _read_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"malformed JSON in {path}: {exc}") from exc


def _spec_from_dict(obj: dict, where: str = "surface spec") -> SurfaceSpec:
    if not isinstance(obj, dict):
        raise InputError(f"{where}: expected a JSON object")
    kind = obj.get("kind")
    if kind == "graph-fn":
        raise InputError(f"{where}: graph-fn surfaces are not representable in JSON")
    if kind not in ("cylinder", "paraboloid", "ellipsoid", "graph-expr"):
        raise InputError(f"{where}: unknown kind {kind!r}")
    n = obj.get("n")
    if not isinstance(n, int) or n < 1:
        raise InputError(f"{where}: 'n' must be a positive integer")
    domain = obj.get("domain", {})
    box = domain.get("box") if isinstance(domain, dict) else None
    if box is None:
        raise InputError(f"{where}: missing domain.box")
    a = None
    node = None
    if kind == "ellipsoid":
        params = obj.get("params", {})
        a = params.get("a") if isinstance(params, dict) else None
        if a is None:
            raise InputError(f"{where}: ellipsoid requires params.a")
    if kind == "graph-expr":
        text = obj.get("expr")
        if not isinstance(text, str):
            raise InputError(f"{where}: graph-expr requires an 'expr' string")
        try:
            node = xp.parse(text, n)
        except xp.ExprSyntaxError as exc:
            raise InputError(f"{where}: expression parse error: {exc}") from exc
    try:
        return SurfaceSpec(
            kind=kind, n=n, domain=box, a=a, expr=node, name=obj.get("name", "")
        )
    except ValueError as exc:
        raise InputError(f"{where}: {exc}") from exc


def load_spec(path: str) -> SurfaceSpec:
    """Load and validate a surface spec JSON file."""
    return _spec_from_dict(_read_json(path))


def _map_from_dict(obj: dict, where: str = "map spec") -> SmoothMap:
    if not isinstance(obj, dict):
        raise InputError(f"{where}: expected a JSON object")
    kind = obj.get("kind")
    if kind == "identity":
        n = obj.get("n")
        if not isinstance(n, int) or n < 1:
            raise InputError(f"{where}: identity map needs a positive 'n'")
        return identity_map(n)
    if kind == "similarity":
        n = obj.get("n")
        if not isinstance(n, int) or n < 1:
            raise InputError(f"{where}: similarity map needs a positive 'n'")
        return similarity_map(
            n,
            m=obj.get("m"),
            scale=float(obj.get("scale", 2.0)),
            seed=int(obj.get("seed", 0)),
        )
    if kind == "graph":
        surface = obj.get("surface")
        if surface is None:
            raise InputError(f"{where}: graph map needs a 'surface' spec")
        return graph_embedding(_spec_from_dict(surface, f"{where}.surface"))
    if kind == "cylinder-unroll":
        n = obj.get("n")
        if not isinstance(n, int) or n < 1:
            raise InputError(f"{where}: cylinder-unroll needs a positive 'n'")
        return cylinder_unroll(n)
    if kind == "expr":
        n = obj.get("n")
        comps = obj.get("components")
        if not isinstance(n, int) or not isinstance(comps, list) or not comps:
            raise InputError(f"{where}: expr map needs 'n' and a component list")
        nodes = []
        for i, text in enumerate(comps):
            try:
                nodes.append(xp.parse(text, n))
            except xp.ExprSyntaxError as exc:
                raise InputError(f"{where}: component {i}: {exc}") from exc
        return expr_vector_map(nodes, n)
    raise InputError(f"{where}: unknown map kind {kind!r}")


# ---------------------------------------------------------------------------
# JSON output (17 significant digits, deterministic bytes)

def _render_json(value, indent: int = 0) -> str:
    pad = "  " * indent
    if isinstance(value, dict):
        if not value:
            return "{}"
        rows = [
            f'{pad}  {json.dumps(str(k))}: {_render_json(v, indent + 1)}'
            for k, v in value.items()
        ]
        return "{\n" + ",\n".join(rows) + "\n" + pad + "}"
    if isinstance(value, (list, tuple)):
        items = list(value)
        if not items:
            return "[]"
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in items):
            return "[" + ", ".join(_render_scalar(v) for v in items) + "]"
        rows = [f"{pad}  {_render_json(v, indent + 1)}" for v in items]
        return "[\n" + ",\n".join(rows) + "\n" + pad + "]"
    return _render_scalar(value)


def _render_scalar(value) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if not math.isfinite(v):
            raise NumericalError("non-finite value in report")
        return format(v, ".17g")
    if isinstance(value, str):
        return json.dumps(value)
    raise TypeError(f"cannot serialize {type(value)!r}")


def dumps_report(report: dict) -> str:
    return _render_json(report) + "\n"


def _floats(arr) -> list:
    return [float(v) for v in np.asarray(arr, dtype=float).ravel()]


def _nested(arr) -> object:
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 1:
        return [float(v) for v in arr]
    return [_nested(sub) for sub in arr]


# ---------------------------------------------------------------------------
# Command implementations

def _sampler(config: RunConfig):
    if config.grid is not None:
        return GridSampler(config.grid)
    return RandomSampler(config.count, config.seed)


def _sample_points(spec: SurfaceSpec, config: RunConfig):
    points, skipped = _sampler(config).points(spec)
    if not points:
        raise NumericalError("zero evaluable points in the sampling domain")
    return points, skipped


def _sampling_echo(config: RunConfig) -> dict:
    if config.grid is not None:
        return {"kind": "grid", "per_axis": list(config.grid)}
    return {"kind": "random", "count": config.count, "seed": config.seed}


def _run_flatness(config: RunConfig, spec_obj: dict) -> dict:
    spec = _spec_from_dict(spec_obj)
    try:
        report = grid_scan(
            spec,
            _sampler(config),
            criterion=config.criterion,
            tol=config.tol,
            mode=config.mode,
        )
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    points = [
        {
            "x": _floats(r.x),
            "verdict": "pass" if r.verdict.passed else "fail",
            "witness_norms": {
                "witness": r.verdict.witness,
                "threshold": r.verdict.threshold,
            },
        }
        for r in report.points
    ]
    return {
        "points": points,
        "aggregate": report.aggregate,
        "skipped": report.skipped,
        "summary": (
            f"flatness[{report.criterion}] on {report.surface}: {report.aggregate} "
            f"({len(points)} points, {report.skipped} skipped, tol {report.tol:g})"
        ),
        "echo_extra": {"criterion": report.criterion, "tol": report.tol, "mode": report.mode},
    }


def _run_curvature(config: RunConfig, spec_obj: dict) -> dict:
    spec = _spec_from_dict(spec_obj)
    if spec.n < 3:
        raise InputError("curvature packs require n >= 3")
    try:
        analyzer = SurfaceAnalyzer(spec, config.mode)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    if config.at is not None:
        if len(config.at) != spec.n:
            raise InputError(f"--at expects {spec.n} coordinates")
        x = np.asarray(config.at, dtype=float)
        if not inside(spec, x):
            raise InputError(f"point {tuple(x)} lies outside the surface domain")
        points, skipped = [x], 0
    else:
        points, skipped = _sample_points(spec, config)
    rows = []
    for x in points:
        pack = analyzer.pack(x)
        verify_pack(pack)
        tensors = {
            "g": _nested(pack.metric.g),
            "ginv": _nested(pack.metric.ginv),
            "b": pack.metric.b,
            "christoffel": _nested(pack.christoffel),
            "second_fundamental": _nested(pack.h),
            "shape": _nested(pack.shape),
            "kappa": _floats(pack.kappa),
            "riemann": _nested(pack.riemann),
            "ricci": _nested(pack.ricci),
            "scalar": pack.scalar,
            "schouten": _nested(pack.schouten),
            "weyl": None if pack.weyl is None else _nested(pack.weyl),
            "cotton": None if pack.cotton is None else _nested(pack.cotton),
        }
        norms = {
            "max_riemann": float(np.abs(pack.riemann).max()),
            "max_weyl": None if pack.weyl is None else float(np.abs(pack.weyl).max()),
            "max_cotton": None if pack.cotton is None else float(np.abs(pack.cotton).max()),
            "scalar": pack.scalar,
        }
        rows.append(
            {"x": _floats(x), "verdict": "ok", "witness_norms": norms, "tensors": tensors}
        )
    return {
        "points": rows,
        "aggregate": "ok",
        "skipped": skipped,
        "summary": f"curvature on {spec.name}: {len(rows)} point(s), {skipped} skipped",
        "echo_extra": {"mode": config.mode, "at": None if config.at is None else list(config.at)},
    }


def _box_sampler_points(obj: dict, config: RunConfig, n: int):
    """Sample a plain box (qc/beltrami configs reuse the surface machinery)."""
    domain = obj.get("domain", {})
    box = domain.get("box") if isinstance(domain, dict) else None
    if box is None:
        raise InputError("config needs a domain.box to sample points from")
    probe = SurfaceSpec(kind="paraboloid", n=n, domain=box, name="sampling-box")
    return _sample_points(probe, config)


def _run_qc(config: RunConfig, obj: dict) -> dict:
    if "map" not in obj:
        raise InputError("qc config requires a 'map' object")
    fmap = _map_from_dict(obj["map"])
    points, skipped = _box_sampler_points(obj, config, fmap.n)
    report = qc_check_map(fmap, points)
    if report.skipped > len(points) / 2:
        raise NumericalError("degenerate Jacobian at more than half of the points")
    rows = [
        {
            "x": _floats(x),
            "verdict": "ok",
            "witness_norms": {"defect": d, "factor": f},
        }
        for x, d, f in zip(report.points, report.defects, report.factors)
    ]
    return {
        "points": rows,
        "aggregate": {"max_defect": report.max_defect},
        "skipped": skipped + report.skipped,
        "summary": (
            f"qc check of {fmap.name}: max defect {report.max_defect:.3e} "
            f"over {len(rows)} points"
        ),
        "echo_extra": {"map": obj["map"]},
    }


def _run_beltrami(config: RunConfig, obj: dict) -> dict:
    if "map" not in obj or "surface" not in obj:
        raise InputError("beltrami config requires 'map' and 'surface' objects")
    hmap = _map_from_dict(obj["map"])
    spec = _spec_from_dict(obj["surface"])
    if hmap.n != spec.n or hmap.m != spec.n:
        raise InputError("candidate map must be a self-map of the surface domain")
    sample_obj = obj if "domain" in obj else {"domain": {"box": _nested(spec.domain)}}
    points, skipped = _box_sampler_points(sample_obj, config, spec.n)
    points = [x for x in points if inside(spec, x)]
    if not points:
        raise NumericalError("zero evaluable points inside the surface domain")
    try:
        report = beltrami_residual(hmap, induced_metric_field(spec), points)
    except MetricNotSPDError as exc:
        raise NumericalError(str(exc)) from exc
    rows = [
        {"x": _floats(x), "verdict": "ok", "witness_norms": {"residual": r}}
        for x, r in zip(report.points, report.residuals)
    ]
    aggregate = {"max_residual": report.max_residual}
    summary = (
        f"beltrami residual of {hmap.name} against {spec.name}: "
        f"max {report.max_residual:.3e} over {len(rows)} points"
    )
    if obj.get("compose", False):
        sigma = graph_embedding(spec)
        comp = compose_check(sigma, hmap, points)
        if comp.skipped > len(points) / 2:
            raise NumericalError("Newton inversion failed at more than half of the points")
        aggregate["max_compose_defect"] = comp.max_defect
        summary += f"; compose defect max {comp.max_defect:.3e}"
    return {
        "points": rows,
        "aggregate": aggregate,
        "skipped": skipped,
        "summary": summary,
        "echo_extra": {"map": obj["map"], "compose": bool(obj.get("compose", False))},
    }


def _run_validate(config: RunConfig, spec_obj: dict) -> dict:
    spec = _spec_from_dict(spec_obj)
    if spec.kind not in BUILTIN_KINDS and spec.kind != "graph-expr":
        raise InputError("validate compares analytic vs fd jets; needs an analytic kind")
    exact = jet_provider(spec, "analytic")
    approx = jet_provider(spec, "fd")
    tol = config.tol if config.tol is not None else 1e-5
    points, skipped = _sample_points(spec, config)
    rows = []
    worst = 0.0
    for x in points:
        try:
            report = validate_jet(
                exact.jet(x, config.order), approx.jet(x, config.order), tol
            )
        except (DomainError, xp.EvalDomainError):
            skipped += 1
            continue
        worst = max(worst, max(report.max_rel.values()))
        rows.append(
            {
                "x": _floats(x),
                "verdict": "pass" if report.ok else "fail",
                "witness_norms": {f"rel_{k}": v for k, v in report.max_rel.items()},
            }
        )
    if not rows:
        raise NumericalError("zero evaluable points in the sampling domain")
    aggregate = "pass" if all(r["verdict"] == "pass" for r in rows) else "fail"
    return {
        "points": rows,
        "aggregate": aggregate,
        "skipped": skipped,
        "summary": (
            f"validate {spec.name} (order {config.order}): {aggregate}, "
            f"worst relative discrepancy {worst:.3e}"
        ),
        "echo_extra": {"tol": tol, "order": config.order},
    }


_RUNNERS = {
    "flatness": _run_flatness,
    "curvature": _run_curvature,
    "qc": _run_qc,
    "beltrami": _run_beltrami,
    "validate": _run_validate,
}


def run(config: RunConfig) -> int:
    """Execute one command; writes the JSON report and a text summary."""
    started = time.monotonic()
    spec_obj = _read_json(config.spec_path)
    result = _RUNNERS[config.command](config, spec_obj)
    echo = {
        "command": config.command,
        "spec": spec_obj,
        "sampling": _sampling_echo(config),
    }
    echo.update(result.get("echo_extra", {}))
    report = {
        "tool_version": __version__,
        "config_echo": echo,
        "points": result["points"],
        "aggregate": result["aggregate"],
        "skipped": result["skipped"],
        # measured time goes to the text summary; a fixed value keeps
        # reports byte-identical across identical runs
        "elapsed_ms": 0,
    }
    payload = dumps_report(report)
    try:
        with open(config.out_path, "w", encoding="utf-8") as fh:
            fh.write(payload)
    except OSError as exc:
        raise InputError(f"cannot write {config.out_path}: {exc}") from exc
    elapsed = (time.monotonic() - started) * 1000.0
    print(result["summary"])
    print(f"report written to {config.out_path} ({elapsed:.0f} ms)")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing

def _parse_grid(text: str) -> tuple:
    try:
        values = tuple(int(part) for part in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad grid spec {text!r}") from exc
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError("grid counts must be positive integers")
    return values


def _parse_point(text: str) -> tuple:
    try:
        return tuple(float(part) for part in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad point {text!r}") from exc


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qcflat",
        description="Conformal-flatness and quasiconformality checks for graph hypersurfaces.",
    )
    parser.add_argument("--version", action="version", version=f"qcflat {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("curvature", "dump curvature tensors at sampled points or a fixed point"),
        ("flatness", "scan a surface and decide local conformal flatness"),
        ("qc", "conformal-defect check of a map spec"),
        ("beltrami", "Beltrami residual of a candidate map against a surface metric"),
        ("validate", "cross-validate analytic jets against finite differences"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--spec", required=True, help="path to the JSON spec file")
        p.add_argument("--out", required=True, help="path for the JSON report")
        p.add_argument("--points", type=int, default=100, help="random sample size")
        p.add_argument("--seed", type=int, default=0, help="sampling seed")
        p.add_argument("--grid", type=_parse_grid, default=None, help="per-axis grid counts k1,k2,...")
        p.add_argument("--tol", type=float, default=None, help="tolerance override")
        p.add_argument(
            "--mode", choices=("analytic", "fd"), default="analytic", help="derivative route"
        )
        if name == "flatness":
            p.add_argument(
                "--criterion", choices=("weyl", "cotton", "pc"), default=None
            )
        if name == "curvature":
            p.add_argument("--at", type=_parse_point, default=None, help="evaluate at x1,x2,...")
        if name == "validate":
            p.add_argument("--order", type=int, choices=(2, 3), default=2)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    config = RunConfig(
        command=args.command,
        spec_path=args.spec,
        out_path=args.out,
        count=args.points,
        seed=args.seed,
        grid=args.grid,
        criterion=getattr(args, "criterion", None),
        tol=args.tol,
        mode=args.mode,
        at=getattr(args, "at", None),
        order=getattr(args, "order", 2),
    )
    try:
        return run(config)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, ScanError, InvariantViolation, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
