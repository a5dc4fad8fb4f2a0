"""Command line front end: configuration, runs, reports, SVG plots.

Verbs: ``run`` executes an adaptive run from a config file and writes its
artifacts (trace.csv, final_state.json, meshes/*.svg, convergence.svg);
``compare`` reports dof ratios and fitted convergence slopes of two runs;
``validate-config`` checks a config file and echoes the normalized
settings; ``emit-presets`` writes the benchmark preset files.

Config files are flat ``key = value`` lines, ``#`` starts a comment line,
blank lines are skipped.  Values keep internal spaces (expression strings
need them); ``none`` clears an optional key.

Exit codes: 0 ok, 2 config error, 4 run finished without reaching the
tolerance, 3 any other numerical failure.  Heavy imports happen inside the
verbs so the SCFEM_THREADS cap is exported before the linear algebra
libraries spin up their thread pools.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, ScfemError, UnknownDomainError

__all__ = [
    "RunConfig", "parse_config", "fit_convergence_slope", "svg_mesh",
    "svg_convergence", "PRESETS", "main",
]

THREADS_VAR = "SCFEM_THREADS"
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")

_BOOL = {"true": True, "false": False}

# key -> converter tag: str | int | float | bool, "opt_" prefix allows none
_PROBLEM_KEYS = {
    "problem": "str", "dim": "int", "sigma": "float", "scale": "float",
    "domain": "str", "kind": "str", "coefficient": "str", "rhs": "str",
}
_ADAPTIVE_KEYS = {
    "mode": "str", "tolerance": "float", "theta_x": "float",
    "theta_c": "float", "vartheta": "float", "theta_init": "opt_float",
    "estimate_period": "int", "max_iterations": "int", "init_cap": "int",
    "local_scaling": "str", "max_total_dofs": "opt_int",
    "solver_rel_tol": "float", "resolution": "opt_int",
}
_OUTPUT_KEYS = {
    "output_dir": "str", "seed": "int", "plot_meshes": "bool",
    "plot_convergence": "bool",
}

_PER_PROBLEM_ARGS = {
    "testI": {"dim", "scale"},
    "testII": {"dim", "sigma"},
    "testIII": set(),
    "custom": {"dim", "domain", "kind", "coefficient", "rhs"},
}


def _apply_thread_env(env=os.environ) -> None:
    value = env.get(THREADS_VAR)
    if value is None:
        return
    if not value.isdigit() or int(value) < 1:
        raise ConfigError(f"{THREADS_VAR} must be a positive integer, "
                          f"got {value!r}")
    for var in _THREAD_VARS:
        env.setdefault(var, value)


def _convert(key: str, value: str, tag: str, lineno: int):
    if tag.startswith("opt_"):
        if value == "none":
            return None
        tag = tag[4:]
    try:
        if tag == "str":
            return value
        if tag == "int":
            return int(value)
        if tag == "float":
            return float(value)
        if value in _BOOL:
            return _BOOL[value]
        raise ValueError(value)
    except ValueError:
        raise ConfigError(
            f"line {lineno}: cannot read {key} = {value!r} as {tag}") from None


@dataclass
class RunConfig:
    """Validated settings of one adaptive run."""

    problem: str
    problem_args: dict = field(default_factory=dict)
    adaptive: dict = field(default_factory=dict)
    output_dir: str = "scfem-out"
    seed: int = 0
    plot_meshes: bool = True
    plot_convergence: bool = True

    def adaptive_config(self):
        from .adaptive import AdaptiveConfig
        return AdaptiveConfig(**self.adaptive)

    def build_problem(self):
        from . import problems
        kwargs = dict(self.problem_args)
        if "coefficient" in kwargs:
            kwargs["coefficient_expr"] = kwargs.pop("coefficient")
        if "rhs" in kwargs:
            kwargs["rhs_expr"] = kwargs.pop("rhs")
        return problems.get_problem(self.problem, **kwargs)

    def normalized(self) -> dict:
        from dataclasses import asdict
        return {
            "problem": self.problem,
            "problem_args": dict(self.problem_args),
            "adaptive": asdict(self.adaptive_config()),
            "output_dir": self.output_dir,
            "seed": self.seed,
            "plot_meshes": self.plot_meshes,
            "plot_convergence": self.plot_convergence,
        }


def parse_config(text: str) -> RunConfig:
    entries: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"line {lineno}: empty key or value")
        if key in entries:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        entries[key] = (value, lineno)

    known = {**_PROBLEM_KEYS, **_ADAPTIVE_KEYS, **_OUTPUT_KEYS}
    for key, (_, lineno) in entries.items():
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    if "problem" not in entries:
        raise ConfigError("config must set 'problem'")

    values = {key: _convert(key, value, known[key], lineno)
              for key, (value, lineno) in entries.items()}
    name = values.pop("problem")
    if name not in _PER_PROBLEM_ARGS:
        raise ConfigError(f"unknown problem {name!r}")
    problem_args = {}
    for key in _PROBLEM_KEYS:
        if key in values:
            if key == "problem":
                continue
            if key not in _PER_PROBLEM_ARGS[name]:
                raise ConfigError(f"{key!r} does not apply to problem {name}")
            problem_args[key] = values.pop(key)
    adaptive = {key: values.pop(key) for key in _ADAPTIVE_KEYS
                if key in values}
    config = RunConfig(problem=name, problem_args=problem_args,
                       adaptive=adaptive, **values)
    config.adaptive_config()
    return config


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config file {path}: {err}") from None
    return parse_config(text)


# ----------------------------------------------------------------- presets

PRESETS = {
    "paper-testI": """\
# affine diffusion coefficient with algebraically decaying modes
problem = testI
dim = 4
mode = multilevel
tolerance = 6e-3
theta_x = 0.3
theta_c = 0.3
vartheta = 1.0
estimate_period = 1
max_iterations = 200
output_dir = paper-testI-out
""",
    "paper-testII": """\
# lognormal-style coefficient from a truncated covariance expansion
problem = testII
dim = 4
sigma = 1.5
mode = multilevel
tolerance = 6e-3
theta_x = 0.3
theta_c = 0.3
vartheta = 1.0
estimate_period = 1
max_iterations = 200
output_dir = paper-testII-out
""",
    "paper-testIII": """\
# moving-peak load with a closed-form mean-square quantity of interest
problem = testIII
mode = multilevel
tolerance = 1e-1
theta_x = 0.3
theta_c = 0.3
vartheta = 1.0
estimate_period = 1
max_iterations = 200
output_dir = paper-testIII-out
""",
}


# ------------------------------------------------------------------- plots

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def _esc(text: str) -> str:
    return (text.replace("&", "&amp;").replace("<", "&lt;")
            .replace(">", "&gt;"))


def svg_mesh(mesh, title: str | None = None) -> str:
    """Wireframe drawing of a triangulation, y axis pointing up."""
    verts = mesh.vertices
    xmin, ymin = verts.min(axis=0)
    xmax, ymax = verts.max(axis=0)
    pad = 0.02 * max(xmax - xmin, ymax - ymin, 1e-30)
    width = xmax - xmin + 2 * pad
    height = ymax - ymin + 2 * pad
    stroke = max(width, height) / 400.0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" '
        f'viewBox="{xmin - pad:g} {-(ymax + pad):g} {width:g} {height:g}" '
        f'width="640" height="{640 * height / width:g}">',
    ]
    if title:
        parts.append(f"<title>{_esc(title)}</title>")
    parts.append(f'<g fill="none" stroke="#334" stroke-width="{stroke:g}" '
                 'stroke-linejoin="round">')
    for tri in mesh.triangles:
        (x0, y0), (x1, y1), (x2, y2) = verts[tri]
        parts.append(f'<path d="M{x0:g} {-y0:g} L{x1:g} {-y1:g} '
                     f'L{x2:g} {-y2:g} Z"/>')
    parts.append("</g></svg>")
    return "\n".join(parts)


def _log_ticks(lo: float, hi: float) -> list:
    return [k for k in range(math.ceil(lo - 1e-9), math.floor(hi + 1e-9) + 1)]


def svg_convergence(series, reference_slope: float | None = -0.5,
                    title: str = "", xlabel: str = "degrees of freedom",
                    ylabel: str = "estimate") -> str:
    """Log-log line plot; ``series`` holds (label, xs, ys) triples."""
    cleaned = []
    for label, xs, ys in series:
        pairs = [(float(x), float(y)) for x, y in zip(xs, ys)
                 if x > 0.0 and y > 0.0]
        if pairs:
            cleaned.append((label, pairs))
    width, height = 640, 480
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}" viewBox="0 0 {width} {height}" '
            f'font-family="sans-serif" font-size="13">')
    if not cleaned:
        return (head + '<text x="40" y="40">no positive data to plot</text>'
                "</svg>")
    ml, mr, mt, mb = 70, 24, 34, 52
    all_x = [x for _, pairs in cleaned for x, _ in pairs]
    all_y = [y for _, pairs in cleaned for _, y in pairs]
    lx0, lx1 = math.log10(min(all_x)), math.log10(max(all_x))
    ly0, ly1 = math.log10(min(all_y)), math.log10(max(all_y))
    if lx1 - lx0 < 1e-9:
        lx0, lx1 = lx0 - 0.5, lx1 + 0.5
    if ly1 - ly0 < 1e-9:
        ly0, ly1 = ly0 - 0.5, ly1 + 0.5
    ly0 -= 0.05 * (ly1 - ly0)
    ly1 += 0.05 * (ly1 - ly0)

    def px(x: float) -> float:
        return ml + (math.log10(x) - lx0) / (lx1 - lx0) * (width - ml - mr)

    def py(y: float) -> float:
        return (height - mb
                - (math.log10(y) - ly0) / (ly1 - ly0) * (height - mt - mb))

    parts = [head]
    if title:
        parts.append(f'<text x="{ml}" y="20" font-size="15">'
                     f"{_esc(title)}</text>")
    parts.append(f'<rect x="{ml}" y="{mt}" width="{width - ml - mr}" '
                 f'height="{height - mt - mb}" fill="none" stroke="#888"/>')
    for k in _log_ticks(lx0, lx1):
        x = px(10.0 ** k)
        parts.append(f'<line x1="{x:.1f}" y1="{mt}" x2="{x:.1f}" '
                     f'y2="{height - mb}" stroke="#ddd"/>')
        parts.append(f'<text x="{x:.1f}" y="{height - mb + 18}" '
                     f'text-anchor="middle">1e{k}</text>')
    for k in _log_ticks(ly0, ly1):
        y = py(10.0 ** k)
        parts.append(f'<line x1="{ml}" y1="{y:.1f}" x2="{width - mr}" '
                     f'y2="{y:.1f}" stroke="#ddd"/>')
        parts.append(f'<text x="{ml - 6}" y="{y + 4:.1f}" '
                     f'text-anchor="end">1e{k}</text>')
    parts.append(f'<text x="{(ml + width - mr) / 2}" y="{height - 12}" '
                 f'text-anchor="middle">{_esc(xlabel)}</text>')
    parts.append(f'<text x="16" y="{(mt + height - mb) / 2}" '
                 f'text-anchor="middle" transform="rotate(-90 16 '
                 f'{(mt + height - mb) / 2})">{_esc(ylabel)}</text>')

    if reference_slope is not None:
        x_anchor, y_anchor = cleaned[0][1][0]
        xa, xb = min(all_x), max(all_x)
        ya = y_anchor * (xa / x_anchor) ** reference_slope
        yb = y_anchor * (xb / x_anchor) ** reference_slope
        parts.append(f'<line x1="{px(xa):.1f}" y1="{py(ya):.1f}" '
                     f'x2="{px(xb):.1f}" y2="{py(yb):.1f}" stroke="#555" '
                     'stroke-dasharray="6 4"/>')
        parts.append(f'<text x="{px(xb):.1f}" y="{py(yb) - 6:.1f}" '
                     f'text-anchor="end" fill="#555">slope '
                     f"{reference_slope:g}</text>")

    for i, (label, pairs) in enumerate(cleaned):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in pairs)
        parts.append(f'<polyline points="{pts}" fill="none" '
                     f'stroke="{color}" stroke-width="1.8"/>')
        for x, y in pairs:
            parts.append(f'<circle cx="{px(x):.1f}" cy="{py(y):.1f}" '
                         f'r="2.6" fill="{color}"/>')
        ly = mt + 18 + 18 * i
        parts.append(f'<line x1="{width - mr - 150}" y1="{ly - 4}" '
                     f'x2="{width - mr - 120}" y2="{ly - 4}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{width - mr - 112}" y="{ly}">'
                     f"{_esc(label)}</text>")
    parts.append("</svg>")
    return "\n".join(parts)


# ------------------------------------------------------------------ verbs

def fit_convergence_slope(dofs, values, last: int = 8) -> float:
    """Least-squares slope of log(value) against log(dofs)."""
    import numpy as np
    xs = np.log(np.asarray(list(dofs)[-last:], dtype=float))
    ys = np.log(np.asarray(list(values)[-last:], dtype=float))
    if xs.size < 2:
        raise ConfigError("need at least two estimate rows for a slope fit")
    return float(np.polyfit(xs, ys, 1)[0])


def _estimate_rows(trace):
    rows = [(r.total_dofs, r.mu + r.tau) for r in trace
            if r.mu is not None and r.mu + r.tau > 0.0]
    if not rows:
        raise ConfigError("trace has no usable estimate rows")
    return rows


def _final_state(problem, config: RunConfig, result, elapsed: float) -> dict:
    last = result.trace.records[-1]
    est = result.estimates
    return {
        "problem": problem.name,
        "mode": result.config.mode,
        "converged": result.converged,
        "stop_reason": result.stop_reason,
        "iterations": len(result.trace),
        "total_dofs": last.total_dofs,
        "qoi": result.qoi,
        "estimates": None if est is None else {
            "mu": est.mu, "tau": est.tau, "iteration": est.iteration,
            "dofs": est.dofs},
        "index_set": [list(nu) for nu in result.index_set],
        "points": [{"key": [str(k) for k in st.point.key],
                    "coords": list(st.point.coords),
                    "vertices": st.mesh.num_vertices}
                   for st in result.states],
        "seed": config.seed,
        "elapsed_seconds": elapsed,
    }


def _cmd_run(args) -> int:
    from . import adaptive
    config = load_config(args.config)
    problem = config.build_problem()
    adaptive_config = config.adaptive_config()
    outdir = Path(config.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)

    started = time.perf_counter()
    trace_path = outdir / "trace.csv"
    with open(trace_path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(adaptive.TRACE_COLUMNS[:-1])

        def observer(record):
            writer.writerow(adaptive.trace_row(record,
                                               include_wall_time=False))
            handle.flush()

        try:
            result = adaptive.run(problem, adaptive_config, observer)
        except ScfemError as err:
            (outdir / "error.json").write_text(
                json.dumps(_error_payload(err), indent=2) + "\n")
            raise
    elapsed = time.perf_counter() - started

    state = _final_state(problem, config, result, elapsed)
    (outdir / "final_state.json").write_text(
        json.dumps(state, indent=2) + "\n")

    if config.plot_meshes:
        mesh_dir = outdir / "meshes"
        mesh_dir.mkdir(exist_ok=True)
        for i, st in enumerate(result.states):
            coords = ", ".join(f"{c:.4g}" for c in st.point.coords)
            (mesh_dir / f"point_{i:02d}.svg").write_text(
                svg_mesh(st.mesh, title=f"mesh at y = ({coords})"))
    if config.plot_convergence:
        rows = [(r.total_dofs, r.mu + r.tau) for r in result.trace
                if r.mu is not None]
        bars = [(r.total_dofs, r.mu_bar + r.tau_bar) for r in result.trace]
        svg = svg_convergence(
            [("estimate", [x for x, _ in rows], [y for _, y in rows]),
             ("indicator total", [x for x, _ in bars],
              [y for _, y in bars])],
            title=f"{problem.name} ({result.config.mode})")
        (outdir / "convergence.svg").write_text(svg)

    print(json.dumps({"output_dir": str(outdir),
                      "converged": result.converged,
                      "stop_reason": result.stop_reason,
                      "iterations": len(result.trace),
                      "qoi": result.qoi}, indent=2))
    return 0 if result.converged else 4


def _load_run(path):
    from .adaptive import AdaptiveTrace
    p = Path(path)
    csv_path = p / "trace.csv" if p.is_dir() else p
    try:
        text = csv_path.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read trace {csv_path}: {err}") from None
    trace = AdaptiveTrace.from_csv(text)
    meta = csv_path.parent / "final_state.json"
    name = None
    if meta.exists():
        name = json.loads(meta.read_text()).get("problem")
    return trace, name


def _cmd_compare(args) -> int:
    trace_a, name_a = _load_run(args.trace_a)
    trace_b, name_b = _load_run(args.trace_b)
    if name_a is not None and name_b is not None and name_a != name_b:
        raise ConfigError(
            f"traces come from different problems: {name_a} vs {name_b}")
    rows_a = _estimate_rows(trace_a)
    rows_b = _estimate_rows(trace_b)
    matched = max(min(v for _, v in rows_a), min(v for _, v in rows_b))
    dofs_a = next(d for d, v in rows_a if v <= matched)
    dofs_b = next(d for d, v in rows_b if v <= matched)
    report = {
        "problem": name_a or name_b,
        "inputs": [str(args.trace_a), str(args.trace_b)],
        "matched_tolerance": matched,
        "dofs_at_match": {"a": dofs_a, "b": dofs_b},
        "dof_ratio": dofs_a / dofs_b,
        "slope": {
            "a": fit_convergence_slope(*zip(*rows_a), last=args.last),
            "b": fit_convergence_slope(*zip(*rows_b), last=args.last),
        },
    }
    svg = svg_convergence(
        [("a: " + str(args.trace_a), [d for d, _ in rows_a],
          [v for _, v in rows_a]),
         ("b: " + str(args.trace_b), [d for d, _ in rows_b],
          [v for _, v in rows_b])],
        title="estimate vs dofs")
    Path(args.output).write_text(svg)
    print(json.dumps(report, indent=2))
    return 0


def _cmd_validate(args) -> int:
    config = load_config(args.config)
    config.build_problem()
    print(json.dumps(config.normalized(), indent=2))
    return 0


def _cmd_presets(args) -> int:
    outdir = Path(args.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, body in PRESETS.items():
        path = outdir / f"{name}.cfg"
        path.write_text(body)
        written.append(str(path))
    print(json.dumps({"written": written}, indent=2))
    return 0


def _error_payload(err: Exception) -> dict:
    return {"error": type(err).__name__, "message": str(err)}


def _exit_code(err: ScfemError) -> int:
    if isinstance(err, (ConfigError, UnknownDomainError)):
        return 2
    return 3


def main(argv=None) -> int:
    _apply_thread_env()
    parser = argparse.ArgumentParser(
        prog="scfem",
        description="Adaptive multilevel stochastic collocation runs")
    sub = parser.add_subparsers(dest="verb", required=True)
    p_run = sub.add_parser("run", help="execute a run from a config file")
    p_run.add_argument("config")
    p_cmp = sub.add_parser("compare", help="compare two run traces")
    p_cmp.add_argument("trace_a")
    p_cmp.add_argument("trace_b")
    p_cmp.add_argument("--output", default="compare.svg",
                       help="combined convergence plot path")
    p_cmp.add_argument("--last", type=int, default=8,
                       help="estimate rows used in the slope fits")
    p_val = sub.add_parser("validate-config",
                           help="check a config file and echo settings")
    p_val.add_argument("config")
    p_pre = sub.add_parser("emit-presets",
                           help="write the benchmark preset files")
    p_pre.add_argument("--output-dir", default=".")
    args = parser.parse_args(argv)

    handlers = {"run": _cmd_run, "compare": _cmd_compare,
                "validate-config": _cmd_validate, "emit-presets": _cmd_presets}
    try:
        return handlers[args.verb](args)
    except ScfemError as err:
        print(json.dumps(_error_payload(err)), file=sys.stderr)
        return _exit_code(err)


if __name__ == "__main__":
    sys.exit(main())
