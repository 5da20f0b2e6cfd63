"""Study orchestration: validated configs in, CSV/JSON/SVG artifacts out.

A study is one named experiment (cross-section solve, strip sweep, cylinder
convergence, ...) described by a TOML config with four sections: geometry,
coefficient, solver, study.  Everything is validated before the first solve;
unknown keys are rejected with a nearest-match hint so typos cannot silently
change an experiment.  Artifacts are deterministic: rerunning the same config
with the same seed must reproduce results.csv byte for byte, which is why
wall time is printed but never persisted and all floats are written with
round-trip formatting (%.17g in CSV, repr in JSON).
"""

from __future__ import annotations

import difflib
import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

try:
    import tomllib
except ImportError:  # Python 3.10
    import tomli as tomllib

from . import __version__, svgplot
from .coefficient import CoefficientError, CoefficientField, verify_ellipticity
from .eigensolve import ConvergenceError, FactorizationError
from .fem import AssemblyError
from .geometry import (
    BaseSpec,
    CrossSectionSpec,
    CylinderSpec,
    Direction,
    GeometryError,
)
from .spectral import (
    DEFAULT_L_SCHEDULE,
    SolverOptions,
    SpectralError,
    cross_resolution,
    decay_profile,
    gap_condition_holds,
    solve_cross_section,
    solve_full,
    solve_reduced,
    sweep_directions,
    upper_bound_quotient,
)

STUDY_KINDS = (
    "cross-section",
    "reduced",
    "sweep",
    "full",
    "convergence",
    "decay",
    "upper-bound",
    "dirichlet-bracket",
)

SOLVER_FAILURES = (SpectralError, ConvergenceError, FactorizationError, AssemblyError)

NO_GAP_TEXT = "no gap: lambda_l = mu1 for all l"
GAP_TEXT = "gap: lim lambda_l < mu1"


class ConfigError(ValueError):
    """Invalid or inconsistent study configuration."""


# ---------------------------------------------------------------------------
# config parsing


def _check_keys(section: str, given: dict, allowed) -> None:
    for key in given:
        if key not in allowed:
            hint = difflib.get_close_matches(key, sorted(allowed), n=1, cutoff=0.5)
            if not hint and section == "study":
                # fall back to every kind's vocabulary so a typo made under
                # the wrong kind still gets a pointer
                pool = sorted({k for keys in _STUDY_KEYS.values() for k in keys})
                hint = difflib.get_close_matches(key, pool, n=1, cutoff=0.5)
            extra = f"; did you mean {hint[0]!r}?" if hint else ""
            raise ConfigError(f"unknown key {key!r} in [{section}]{extra}")


def _require(section: str, table: dict, key: str):
    if key not in table:
        raise ConfigError(f"missing key {key!r} in [{section}]")
    return table[key]


def _as_float(section: str, key: str, value, positive: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"[{section}] {key} must be a number, got {value!r}")
    v = float(value)
    if positive and not v > 0.0:
        raise ConfigError(f"[{section}] {key} must be positive, got {v}")
    return v


def _as_int(section: str, key: str, value, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"[{section}] {key} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"[{section}] {key} must be >= {minimum}, got {value}")
    return value


def _as_bool(section: str, key: str, value) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(f"[{section}] {key} must be true or false, got {value!r}")
    return value


def _float_list(section: str, key: str, value, positive: bool = False) -> list[float]:
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(f"[{section}] {key} must be a nonempty array")
    return [_as_float(section, key, v, positive=positive) for v in value]


def _parse_base(cfg: dict) -> BaseSpec:
    if not isinstance(cfg, dict):
        raise ConfigError("[geometry] base must be a table")
    kind = _require("geometry.base", cfg, "kind")
    try:
        if kind == "interval":
            _check_keys("geometry.base", cfg, ("kind", "a", "b"))
            a = _as_float("geometry.base", "a", _require("geometry.base", cfg, "a"))
            b = _as_float("geometry.base", "b", _require("geometry.base", cfg, "b"))
            return BaseSpec.interval(a, b)
        if kind == "polygon":
            _check_keys("geometry.base", cfg, ("kind", "vertices"))
            verts = _require("geometry.base", cfg, "vertices")
            return BaseSpec.polygon(verts)
        if kind == "regular_polygon":
            _check_keys("geometry.base", cfg, ("kind", "sides", "circumradius"))
            sides = _as_int("geometry.base", "sides", cfg.get("sides", 24), minimum=3)
            rad = _as_float(
                "geometry.base", "circumradius", cfg.get("circumradius", 1.0),
                positive=True,
            )
            return BaseSpec.regular_polygon(sides, rad)
    except (GeometryError, ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid [geometry] base: {exc}") from exc
    raise ConfigError(
        f"unknown base kind {kind!r}; expected interval, polygon or regular_polygon"
    )


def _parse_geometry(cfg: dict) -> tuple[BaseSpec, CrossSectionSpec]:
    _check_keys("geometry", cfg, ("base", "cross"))
    base = _parse_base(_require("geometry", cfg, "base"))
    cross_cfg = _require("geometry", cfg, "cross")
    if not isinstance(cross_cfg, dict):
        raise ConfigError("[geometry] cross must be a table")
    _check_keys("geometry.cross", cross_cfg, ("intervals",))
    raw = _require("geometry.cross", cross_cfg, "intervals")
    if not isinstance(raw, (list, tuple)) or not raw:
        raise ConfigError("[geometry.cross] intervals must be a nonempty array")
    ivals = []
    for pair in raw:
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise ConfigError(f"cross interval must be [a, b], got {pair!r}")
        ivals.append((float(pair[0]), float(pair[1])))
    try:
        cross = CrossSectionSpec(tuple(ivals))
    except (GeometryError, ValueError) as exc:
        raise ConfigError(f"invalid [geometry] cross: {exc}") from exc
    return base, cross


def _parse_coefficient(cfg: dict, m: int, p: int, cross) -> CoefficientField:
    _check_keys("coefficient", cfg, ("entries", "identity", "m"))
    if "m" in cfg and _as_int("coefficient", "m", cfg["m"], minimum=1) != m:
        raise ConfigError(
            f"[coefficient] m = {cfg['m']} conflicts with the base geometry (m = {m})"
        )
    if ("entries" in cfg) == ("identity" in cfg):
        raise ConfigError("[coefficient] needs exactly one of 'entries' or 'identity'")
    try:
        if "identity" in cfg:
            size = _as_int("coefficient", "identity", cfg["identity"], minimum=2)
            if size != m + p:
                raise ConfigError(
                    f"[coefficient] identity = {size} but the geometry needs "
                    f"m + p = {m + p}"
                )
            A = CoefficientField.identity(m, p)
        else:
            rows = cfg["entries"]
            if not isinstance(rows, (list, tuple)):
                raise ConfigError("[coefficient] entries must be an array of arrays")
            A = CoefficientField.from_strings(
                m, [[str(e) for e in row] for row in rows]
            )
    except CoefficientError as exc:
        raise ConfigError(f"invalid [coefficient]: {exc}") from exc
    if A.p != p:
        raise ConfigError(
            f"[coefficient] has p = {A.p} cross variables but the cross section "
            f"has p = {p}"
        )
    try:
        verify_ellipticity(A, cross, 16)
    except CoefficientError as exc:
        raise ConfigError(f"invalid [coefficient]: {exc}") from exc
    return A


def _parse_solver(cfg: dict) -> SolverOptions:
    _check_keys("solver", cfg, ("tol", "seed", "max_iter", "dof_cap"))
    opts = SolverOptions()
    if "tol" in cfg:
        opts = replace(opts, tol=_as_float("solver", "tol", cfg["tol"], positive=True))
    if "seed" in cfg:
        opts = replace(opts, seed=_as_int("solver", "seed", cfg["seed"], minimum=0))
    if "max_iter" in cfg:
        opts = replace(
            opts, max_iter=_as_int("solver", "max_iter", cfg["max_iter"], minimum=1)
        )
    if "dof_cap" in cfg:
        opts = replace(
            opts, dof_cap=_as_int("solver", "dof_cap", cfg["dof_cap"], minimum=1)
        )
    return opts


def _ascending(section: str, key: str, values: list[float]) -> list[float]:
    for a, b in zip(values, values[1:]):
        if not b > a:
            raise ConfigError(f"[{section}] {key} must be strictly increasing")
    return values


_STUDY_KEYS = {
    "cross-section": ("kind", "target_h"),
    "reduced": ("kind", "direction", "L_schedule", "target_h", "rel_tol"),
    "sweep": (
        "kind",
        "directions",
        "refine",
        "L_schedule",
        "target_h",
        "rel_tol",
    ),
    "full": ("kind", "length", "k", "target_h", "bc", "mesh_kind"),
    "convergence": (
        "kind",
        "lengths",
        "h_schedule",
        "length",
        "k",
        "target_h",
        "reference_directions",
    ),
    "decay": ("kind", "length", "radii", "target_h", "enforce_gap"),
    "upper-bound": ("kind", "length", "face", "K_schedule", "target_h"),
    "dirichlet-bracket": ("kind", "lengths", "k", "target_h"),
}


def _parse_study(cfg: dict, m: int, kind: str | None) -> tuple[str, dict]:
    sec = "study"
    in_file = cfg.get("kind")
    if in_file is not None and in_file not in STUDY_KINDS:
        raise ConfigError(
            f"unknown study kind {in_file!r}; expected one of {', '.join(STUDY_KINDS)}"
        )
    if kind is None:
        kind = in_file
    elif in_file is not None and in_file != kind:
        raise ConfigError(
            f"study kind {in_file!r} in the config conflicts with the requested "
            f"{kind!r}"
        )
    if kind is None:
        raise ConfigError("missing key 'kind' in [study]")
    _check_keys(sec, cfg, _STUDY_KEYS[kind])
    p: dict = {}
    p["target_h"] = _as_float(sec, "target_h", cfg.get("target_h", 0.1), positive=True)

    if kind == "reduced":
        direction = _float_list(sec, "direction", _require(sec, cfg, "direction"))
        if len(direction) != m:
            raise ConfigError(f"[study] direction must have {m} components")
        norm = math.hypot(*direction)
        if norm < 1e-12:
            raise ConfigError("[study] direction must be nonzero")
        p["direction"] = [d / norm for d in direction]
    if kind in ("reduced", "sweep"):
        p["L_schedule"] = _ascending(
            sec,
            "L_schedule",
            _float_list(
                sec, "L_schedule", cfg.get("L_schedule", list(DEFAULT_L_SCHEDULE)),
                positive=True,
            ),
        )
        rel = _as_float(sec, "rel_tol", cfg.get("rel_tol", 1e-4), positive=True)
        if rel >= 1.0:
            raise ConfigError("[study] rel_tol must be below 1")
        p["rel_tol"] = rel
    if kind == "sweep":
        p["directions"] = _as_int(sec, "directions", cfg.get("directions", 64), minimum=1)
        p["refine"] = _as_bool(sec, "refine", cfg.get("refine", False))
    if kind in ("full", "decay", "upper-bound"):
        p["length"] = _as_float(sec, "length", _require(sec, cfg, "length"), positive=True)
    if kind in ("full", "convergence", "dirichlet-bracket"):
        p["k"] = _as_int(sec, "k", cfg.get("k", 1), minimum=1)
    if kind == "full":
        bc = cfg.get("bc", "mixed")
        if bc not in ("mixed", "dirichlet"):
            raise ConfigError(f"[study] bc must be 'mixed' or 'dirichlet', got {bc!r}")
        p["bc"] = bc
        mesh_kind = cfg.get("mesh_kind", "auto")
        if mesh_kind not in ("auto", "simplicial"):
            raise ConfigError(
                f"[study] mesh_kind must be 'auto' or 'simplicial', got {mesh_kind!r}"
            )
        p["mesh_kind"] = mesh_kind
    if kind == "convergence":
        has_l = "lengths" in cfg
        has_h = "h_schedule" in cfg
        if has_l == has_h:
            raise ConfigError(
                "[study] convergence needs exactly one of 'lengths' or 'h_schedule'"
            )
        if has_l:
            p["lengths"] = _ascending(
                sec, "lengths", _float_list(sec, "lengths", cfg["lengths"], positive=True)
            )
        else:
            p["h_schedule"] = _float_list(
                sec, "h_schedule", cfg["h_schedule"], positive=True
            )
            p["length"] = _as_float(
                sec, "length", _require(sec, cfg, "length"), positive=True
            )
        p["reference_directions"] = _as_int(
            sec, "reference_directions", cfg.get("reference_directions", 16), minimum=0
        )
    if kind == "dirichlet-bracket":
        p["lengths"] = _ascending(
            sec,
            "lengths",
            _float_list(sec, "lengths", _require(sec, cfg, "lengths"), positive=True),
        )
    if kind == "decay":
        radii = sorted(_float_list(sec, "radii", _require(sec, cfg, "radii"), positive=True))
        if len(radii) < 2:
            raise ConfigError("[study] decay needs at least 2 radii")
        if radii[-1] > p["length"] + 1e-12:
            raise ConfigError("[study] radii must not exceed the cylinder length")
        p["radii"] = radii
        p["enforce_gap"] = _as_bool(sec, "enforce_gap", cfg.get("enforce_gap", True))
    if kind == "upper-bound":
        face = _require(sec, cfg, "face")
        if not isinstance(face, str):
            raise ConfigError(f"[study] face must be a face id string, got {face!r}")
        p["face"] = face
        p["K_schedule"] = _ascending(
            sec,
            "K_schedule",
            _float_list(sec, "K_schedule", cfg.get("K_schedule", [2.0, 4.0]), positive=True),
        )
    return kind, p


@dataclass
class StudyConfig:
    """A fully validated study: geometry, coefficient, solver and parameters."""

    base: BaseSpec
    cross: CrossSectionSpec
    coefficient: CoefficientField
    solver: SolverOptions
    kind: str
    params: dict

    @classmethod
    def from_dict(cls, cfg: dict, kind: str | None = None) -> "StudyConfig":
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a table of sections")
        _check_keys("config", cfg, ("geometry", "coefficient", "solver", "study"))
        for name in ("geometry", "coefficient", "study"):
            if name not in cfg:
                raise ConfigError(f"missing section [{name}]")
            if not isinstance(cfg[name], dict):
                raise ConfigError(f"[{name}] must be a table")
        base, cross = _parse_geometry(cfg["geometry"])
        A = _parse_coefficient(cfg["coefficient"], base.m, cross.p, cross)
        solver = _parse_solver(cfg.get("solver", {}))
        kind, params = _parse_study(cfg["study"], base.m, kind)
        return cls(base, cross, A, solver, kind, params)

    def to_dict(self) -> dict:
        if self.base.kind == "interval":
            base = {
                "kind": "interval",
                "a": self.base.bounds[0],
                "b": self.base.bounds[1],
            }
        else:
            base = {
                "kind": "polygon",
                "vertices": [[float(x), float(y)] for x, y in self.base.vertices],
            }
        return {
            "geometry": {
                "base": base,
                "cross": {"intervals": [[a, b] for a, b in self.cross.intervals]},
            },
            "coefficient": {
                "m": self.coefficient.m,
                "entries": self.coefficient.entry_strings(),
            },
            # no max_iter key when unset: TOML has no null, and the echo must
            # re-parse as a config
            "solver": {
                "tol": self.solver.tol,
                "seed": self.solver.seed,
                "dof_cap": self.solver.dof_cap,
                **(
                    {"max_iter": self.solver.max_iter}
                    if self.solver.max_iter is not None
                    else {}
                ),
            },
            "study": {"kind": self.kind, **self.params},
        }

    def __eq__(self, other):
        if not isinstance(other, StudyConfig):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def load_config(path: str, kind: str | None = None) -> StudyConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config {path!r} is not valid TOML: {exc}") from exc
    return StudyConfig.from_dict(raw, kind=kind)


# ---------------------------------------------------------------------------
# records and artifacts


@dataclass
class StudyRecord:
    """One completed (or aborted) study run, ready for persistence."""

    study: str
    config: dict
    columns: list[str]
    rows: list[dict]
    summary: dict
    references: list[tuple[str, float, str]]
    x_column: str
    y_columns: list[str]
    provenance: dict = field(default_factory=dict)
    failure: str | None = None

    def csv_text(self) -> str:
        lines = [",".join(self.columns)]
        for row in self.rows:
            lines.append(",".join("%.17g" % float(row[c]) for c in self.columns))
        return "\n".join(lines) + "\n"

    def to_json_dict(self) -> dict:
        doc = {
            "study": self.study,
            "config": self.config,
            "columns": list(self.columns),
            "rows": [{c: float(r[c]) for c in self.columns} for r in self.rows],
            "summary": _jsonable(self.summary),
            "provenance": self.provenance,
        }
        if self.failure is not None:
            doc["failure"] = self.failure
        return doc


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


def config_hash(config_echo: dict) -> str:
    text = json.dumps(config_echo, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def emit_plot(record: StudyRecord) -> str:
    """Render a record to SVG; requires at least one row."""
    if not record.rows:
        raise ValueError("cannot plot an empty record")
    series = []
    for col in record.y_columns:
        pts = [(float(r[record.x_column]), float(r[col])) for r in record.rows]
        series.append((col if len(record.y_columns) > 1 else "", pts))
    return svgplot.render(
        series,
        xlabel=record.x_column,
        ylabel=record.y_columns[0] if len(record.y_columns) == 1 else "",
        title=f"{record.study} study",
        references=record.references,
    )


def write_artifacts(record: StudyRecord, out_dir: str) -> dict:
    """Write results.csv / results.json / plot.svg (+ FAILED marker) to out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    csv_path = os.path.join(out_dir, "results.csv")
    with open(csv_path, "w", newline="\n") as fh:
        fh.write(record.csv_text())
    paths["csv"] = csv_path
    json_path = os.path.join(out_dir, "results.json")
    with open(json_path, "w", newline="\n") as fh:
        json.dump(record.to_json_dict(), fh, indent=2)
        fh.write("\n")
    paths["json"] = json_path
    drawable = any(
        math.isfinite(float(r[record.x_column])) and
        any(math.isfinite(float(r[c])) for c in record.y_columns)
        for r in record.rows
    )
    if drawable:
        svg_path = os.path.join(out_dir, "plot.svg")
        with open(svg_path, "w", newline="\n") as fh:
            fh.write(emit_plot(record))
        paths["svg"] = svg_path
    if record.failure is not None:
        marker = os.path.join(out_dir, "FAILED")
        with open(marker, "w", newline="\n") as fh:
            fh.write(record.failure + "\n")
        paths["failed"] = marker
    return paths


# ---------------------------------------------------------------------------
# study runners


def _value_columns(prefix: str, k: int) -> list[str]:
    if k == 1:
        return [prefix]
    return [f"{prefix}{i}" for i in range(1, k + 1)]


def _theta(direction: Direction) -> float:
    v = direction.array
    if v.shape[0] == 1:
        return float(v[0])
    ang = math.atan2(v[1], v[0])
    if ang < 0.0:
        ang += 2.0 * math.pi
    return ang


def _mu1_result(cfg: StudyConfig):
    n = cross_resolution(cfg.cross, cfg.params["target_h"])
    return solve_cross_section(cfg.cross, cfg.coefficient, n, solver=cfg.solver)


def _run_cross_section(cfg, jobs, keep_going):
    cs = _mu1_result(cfg)
    row = {
        "target_h": cfg.params["target_h"],
        "mu1": cs.mu1,
        "gap_indicator": cs.gap_indicator,
        "residual": cs.residual,
        "dofs": float(cs.dofs),
    }
    gap = gap_condition_holds(cs)
    summary = {
        "mu1": cs.mu1,
        "gap_indicator": cs.gap_indicator,
        "gap_condition": gap,
        "prediction": GAP_TEXT if gap else NO_GAP_TEXT,
    }
    refs = [("mu1", cs.mu1, "dashed")]
    cols = ["target_h", "mu1", "gap_indicator", "residual", "dofs"]
    return cols, [row], summary, refs, "target_h", ["mu1"], None


def _run_reduced(cfg, jobs, keep_going):
    p = cfg.params
    nu = Direction(tuple(p["direction"]))
    red = solve_reduced(
        cfg.coefficient,
        nu,
        cfg.cross,
        L_schedule=tuple(p["L_schedule"]),
        target_h=p["target_h"],
        rel_tol=p["rel_tol"],
        solver=cfg.solver,
        stop_early=False,
    )
    rows = [
        {
            "L": L,
            "value": v,
            "residual": r,
            "dofs": float(d),
        }
        for L, v, r, d in zip(red.lengths, red.values, red.residuals, red.dofs)
    ]
    cs = _mu1_result(cfg)
    summary = {
        "direction": [float(x) for x in nu.array],
        "Z_extrap": red.limit_value,
        "converged": red.converged,
        "mu1": cs.mu1,
        "Z_extrap_minus_mu1": red.limit_value - cs.mu1,
    }
    refs = [("mu1", cs.mu1, "dashed")]
    cols = ["L", "value", "residual", "dofs"]
    return cols, rows, summary, refs, "L", ["value"], None


def _sweep_grid(m: int, count: int) -> list[Direction]:
    if m == 1:
        return [Direction((1.0,)), Direction((-1.0,))]
    return [
        Direction((math.cos(2.0 * math.pi * i / count), math.sin(2.0 * math.pi * i / count)))
        for i in range(count)
    ]


def _sweep_cell(args):
    A, nu, cross, schedule, target_h, rel_tol, solver = args
    try:
        red = solve_reduced(
            A,
            nu,
            cross,
            L_schedule=schedule,
            target_h=target_h,
            rel_tol=rel_tol,
            solver=solver,
            stop_early=False,
        )
        return red.limit_value, red.residuals[-1], float(red.dofs[-1]), None
    except SOLVER_FAILURES as exc:
        return float("nan"), float("nan"), 0.0, str(exc)


def _run_sweep(cfg, jobs, keep_going):
    p = cfg.params
    m = cfg.base.m
    xcol = "nu" if m == 1 else "theta"
    cols = [xcol, "value", "residual", "dofs"]
    cs = _mu1_result(cfg)
    failure = None
    if not keep_going:
        sw = sweep_directions(
            cfg.coefficient,
            cfg.cross,
            angular_resolution=2.0 * math.pi / p["directions"],
            refine=p["refine"],
            L_schedule=tuple(p["L_schedule"]),
            target_h=p["target_h"],
            rel_tol=p["rel_tol"],
            solver=cfg.solver,
            jobs=jobs,
        )
        rows = [
            {
                xcol: _theta(d),
                "value": v,
                "residual": red.residuals[-1],
                "dofs": float(red.dofs[-1]),
            }
            for (d, v), red in zip(sw.samples, sw.results)
        ]
        min_value = sw.min_value
        argmin = sw.argmin_direction
    else:
        # cell-by-cell map so one failed direction yields a NaN row instead of
        # aborting the sweep; refinement is skipped, a poisoned argmin is not
        # worth refining
        grid = _sweep_grid(m, p["directions"])
        tasks = [
            (
                cfg.coefficient,
                nu,
                cfg.cross,
                tuple(p["L_schedule"]),
                p["target_h"],
                p["rel_tol"],
                cfg.solver,
            )
            for nu in grid
        ]
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                cells = list(pool.map(_sweep_cell, tasks))
        else:
            cells = [_sweep_cell(t) for t in tasks]
        rows = [
            {xcol: _theta(nu), "value": v, "residual": r, "dofs": d}
            for nu, (v, r, d, _) in zip(grid, cells)
        ]
        errors = [e for _, _, _, e in cells if e is not None]
        if errors:
            failure = f"{len(errors)} of {len(grid)} directions failed: {errors[0]}"
        finite = [(v, nu) for nu, (v, _, _, e) in zip(grid, cells) if e is None]
        if not finite:
            raise SpectralError(f"all sweep directions failed: {errors[0]}")
        min_value, argmin = min(finite, key=lambda t: t[0])
    rows.sort(key=lambda r: r[xcol])
    summary = {
        "min_value": min_value,
        "argmin_direction": [float(x) for x in argmin.array],
        "argmin_theta": _theta(argmin),
        "mu1": cs.mu1,
        "mu1_minus_min": cs.mu1 - min_value,
    }
    refs = [("mu1", cs.mu1, "dashed"), ("min Z", min_value, "dotted")]
    return cols, rows, summary, refs, xcol, ["value"], failure


def _run_full(cfg, jobs, keep_going):
    p = cfg.params
    cyl = CylinderSpec(cfg.base, cfg.cross, p["length"])
    res = solve_full(
        cyl,
        cfg.coefficient,
        k=p["k"],
        target_h=p["target_h"],
        bc=p["bc"],
        solver=cfg.solver,
        mesh_kind=p["mesh_kind"],
    )
    dofs = float(res.vectors.shape[0])
    rows = [
        {"index": float(i + 1), "value": v, "residual": r, "dofs": dofs}
        for i, (v, r) in enumerate(zip(res.values, res.residuals))
    ]
    cs = _mu1_result(cfg)
    summary = {
        "values": [float(v) for v in res.values],
        "mu1": cs.mu1,
        "mu1_minus_lambda1": cs.mu1 - float(res.values[0]),
        "bc": p["bc"],
    }
    refs = [("mu1", cs.mu1, "dashed")]
    cols = ["index", "value", "residual", "dofs"]
    return cols, rows, summary, refs, "index", ["value"], None


def _length_sweep_rows(cfg, xcol, xs, k, bc, target_of, keep_going):
    """Shared cell loop for convergence and dirichlet-bracket studies.

    A failed cell aborts by default, keeping the rows completed so far; with
    keep_going the failure becomes a NaN row and the loop continues.
    """
    vcols = _value_columns("value", k)
    rcols = _value_columns("residual", k)
    rows = []
    errors = []
    for x in xs:
        length, th = target_of(x)
        row = {xcol: x}
        try:
            cyl = CylinderSpec(cfg.base, cfg.cross, length)
            res = solve_full(
                cyl, cfg.coefficient, k=k, target_h=th, bc=bc, solver=cfg.solver
            )
            for c, v in zip(vcols, res.values):
                row[c] = float(v)
            for c, r in zip(rcols, res.residuals):
                row[c] = float(r)
            row["dofs"] = float(res.vectors.shape[0])
        except SOLVER_FAILURES as exc:
            errors.append(f"{xcol}={x:g}: {exc}")
            if not keep_going:
                break
            for c in vcols + rcols:
                row[c] = float("nan")
            row["dofs"] = 0.0
        rows.append(row)
    cols = [xcol] + vcols + rcols + ["dofs"]
    failure = f"{len(errors)} of {len(xs)} cells failed: {errors[0]}" if errors else None
    return cols, vcols, rows, failure


def _run_convergence(cfg, jobs, keep_going):
    p = cfg.params
    if "lengths" in p:
        xcol, xs = "length", p["lengths"]
        target_of = lambda x: (x, p["target_h"])  # noqa: E731
    else:
        xcol, xs = "target_h", sorted(p["h_schedule"], reverse=True)
        target_of = lambda x: (p["length"], x)  # noqa: E731
    cols, vcols, rows, failure = _length_sweep_rows(
        cfg, xcol, xs, p["k"], "mixed", target_of, keep_going
    )
    cs = _mu1_result(cfg)
    summary = {
        "mu1": cs.mu1,
        "gap_condition": gap_condition_holds(cs),
    }
    refs = [("mu1", cs.mu1, "dashed")]
    if p["reference_directions"] > 0 and failure is None:
        sw = sweep_directions(
            cfg.coefficient,
            cfg.cross,
            angular_resolution=2.0 * math.pi / p["reference_directions"],
            refine=False,
            target_h=p["target_h"],
            solver=cfg.solver,
            jobs=jobs,
        )
        summary["min_Z"] = sw.min_value
        summary["argmin_direction"] = [float(x) for x in sw.argmin_direction.array]
        refs.append(("min Z", sw.min_value, "dotted"))
    finite = [r for r in rows if math.isfinite(r[vcols[0]])]
    if finite:
        summary["last_value"] = finite[-1][vcols[0]]
    return cols, rows, summary, refs, xcol, vcols, failure


def _run_decay(cfg, jobs, keep_going):
    p = cfg.params
    cyl = CylinderSpec(cfg.base, cfg.cross, p["length"])
    prof = decay_profile(
        cyl,
        cfg.coefficient,
        p["radii"],
        target_h=p["target_h"],
        solver=cfg.solver,
        enforce_gap=p["enforce_gap"],
    )
    rows = [
        {
            "radius": r,
            "mass": m,
            "grad_mass": g,
            "volume_fraction": vf,
            "residual": prof.residual,
            "dofs": float(prof.dofs),
        }
        for r, m, g, vf in zip(
            prof.radii, prof.masses, prof.grad_masses, prof.volume_fractions
        )
    ]
    summary = {
        "eigenvalue": prof.eigenvalue,
        "log_slope": prof.log_slope,
        "concentration_slope": prof.concentration_slope,
    }
    cols = ["radius", "mass", "grad_mass", "volume_fraction", "residual", "dofs"]
    return cols, rows, summary, [], "radius", ["mass", "grad_mass"], None


def _run_upper_bound(cfg, jobs, keep_going):
    p = cfg.params
    cyl = CylinderSpec(cfg.base, cfg.cross, p["length"])
    lam = solve_full(
        cyl, cfg.coefficient, k=1, target_h=p["target_h"], solver=cfg.solver
    )
    lam1 = float(lam.values[0])
    dofs = float(lam.vectors.shape[0])
    rows = []
    errors = []
    for K in p["K_schedule"]:
        row = {"K": K, "residual": float("nan"), "dofs": dofs}
        try:
            row["quotient"] = upper_bound_quotient(
                cyl, cfg.coefficient, p["face"], K,
                target_h=p["target_h"], solver=cfg.solver,
            )
        except SOLVER_FAILURES as exc:
            errors.append(f"K={K:g}: {exc}")
            if not keep_going:
                break
            row["quotient"] = float("nan")
        rows.append(row)
    failure = (
        f"{len(errors)} of {len(p['K_schedule'])} cells failed: {errors[0]}"
        if errors
        else None
    )
    cs = _mu1_result(cfg)
    summary = {
        "lambda1": lam1,
        "mu1": cs.mu1,
        "quotients": [float(r["quotient"]) for r in rows],
    }
    refs = [("mu1", cs.mu1, "dashed"), ("lambda_l", lam1, "solid")]
    cols = ["K", "quotient", "residual", "dofs"]
    return cols, rows, summary, refs, "K", ["quotient"], failure


def _run_dirichlet_bracket(cfg, jobs, keep_going):
    p = cfg.params
    cols, vcols, rows, failure = _length_sweep_rows(
        cfg,
        "length",
        p["lengths"],
        p["k"],
        "dirichlet",
        lambda x: (x, p["target_h"]),
        keep_going,
    )
    cs = _mu1_result(cfg)
    summary = {"mu1": cs.mu1}
    pts = [
        (r["length"], r[vcols[0]] - cs.mu1)
        for r in rows
        if math.isfinite(r[vcols[0]]) and r[vcols[0]] > cs.mu1
    ]
    if len(pts) >= 2:
        ls = np.log([x for x, _ in pts])
        gaps = np.log([g for _, g in pts])
        summary["fit_slope"] = float(np.polyfit(ls, gaps, 1)[0])
    refs = [("mu1", cs.mu1, "dashed")]
    return cols, rows, summary, refs, "length", vcols, failure


_RUNNERS = {
    "cross-section": _run_cross_section,
    "reduced": _run_reduced,
    "sweep": _run_sweep,
    "full": _run_full,
    "convergence": _run_convergence,
    "decay": _run_decay,
    "upper-bound": _run_upper_bound,
    "dirichlet-bracket": _run_dirichlet_bracket,
}


def run_study(
    cfg: StudyConfig,
    jobs: int = 1,
    keep_going: bool = False,
) -> StudyRecord:
    """Execute a study and return its record (failure recorded, not raised)."""
    echo = cfg.to_dict()
    provenance = {
        "config_sha256": config_hash(echo),
        "code_version": __version__,
        "seed": cfg.solver.seed,
    }
    runner = _RUNNERS[cfg.kind]
    try:
        cols, rows, summary, refs, xcol, ycols, failure = runner(cfg, jobs, keep_going)
    except SOLVER_FAILURES as exc:
        return StudyRecord(
            study=cfg.kind,
            config=echo,
            columns=[],
            rows=[],
            summary={},
            references=[],
            x_column="",
            y_columns=[],
            provenance=provenance,
            failure=str(exc),
        )
    return StudyRecord(
        study=cfg.kind,
        config=echo,
        columns=cols,
        rows=rows,
        summary=summary,
        references=refs,
        x_column=xcol,
        y_columns=ycols,
        provenance=provenance,
        failure=failure,
    )


def summary_lines(record: StudyRecord) -> list[str]:
    """One-screen human summary, printed by the CLI (never persisted)."""
    s = record.summary
    lines = [f"study: {record.study}  rows: {len(record.rows)}"]
    if record.failure is not None:
        lines.append(f"FAILED: {record.failure}")
    if not s:
        return lines
    if record.study == "cross-section":
        lines.append(
            "mu1 = %.6f  gap_indicator = %.4g" % (s["mu1"], s["gap_indicator"])
        )
        lines.append(f"prediction: {s['prediction']}")
    elif record.study == "reduced":
        lines.append(
            "Z_extrap = %.6f  converged = %s  mu1 = %.6f  Z_extrap - mu1 = %.3g"
            % (s["Z_extrap"], s["converged"], s["mu1"], s["Z_extrap_minus_mu1"])
        )
    elif record.study == "sweep":
        d = s["argmin_direction"]
        lines.append(
            "min_nu Z = %.6f at direction (%s)  mu1 = %.6f  mu1 - min = %.4g"
            % (s["min_value"], ", ".join("%.4f" % x for x in d), s["mu1"],
               s["mu1_minus_min"])
        )
    elif record.study == "full":
        vals = ", ".join("%.6f" % v for v in s["values"])
        lines.append(f"eigenvalues ({s['bc']}): {vals}")
        lines.append(
            "mu1 = %.6f  mu1 - lambda_1 = %.4g" % (s["mu1"], s["mu1_minus_lambda1"])
        )
    elif record.study == "convergence":
        if "last_value" in s:
            lines.append("last value = %.6f" % s["last_value"])
        if "min_Z" in s:
            lines.append("min_nu Z = %.6f" % s["min_Z"])
        lines.append("mu1 = %.6f" % s["mu1"])
    elif record.study == "decay":
        lines.append(
            "eigenvalue = %.6f  log_slope = %.4f  concentration_slope = %.4f"
            % (s["eigenvalue"], s["log_slope"], s["concentration_slope"])
        )
    elif record.study == "upper-bound":
        qs = ", ".join("%.6f" % q for q in s["quotients"])
        lines.append(
            "lambda_l = %.6f  quotients = [%s]  mu1 = %.6f"
            % (s["lambda1"], qs, s["mu1"])
        )
    elif record.study == "dirichlet-bracket":
        line = "mu1 = %.6f" % s["mu1"]
        if "fit_slope" in s:
            line += "  fit slope of log(sigma_1 - mu1) vs log(l) = %.4f" % s["fit_slope"]
        lines.append(line)
    return lines
