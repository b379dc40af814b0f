"""Experiment configuration: YAML schema, validation, object construction.

A config is a YAML mapping with nested sections.  Units throughout: rates per
unit time, lengths in lattice units, times in process time.  Validation is
field-by-field and runs before any simulation starts; every violated
precondition reports the offending field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import yaml

from .engine import SimConfig
from .geometry import SeedSet, SpaceTimeBox, box
from .kernel import InvalidKernelError, Kernel

__all__ = ["ConfigError", "load_config", "validate_config", "OPERATIONS",
           "build_kernel", "build_seed_set", "build_sim_config"]

OPERATIONS = (
    "simulate",
    "survival",
    "delta-c",
    "susceptibility",
    "upper-density",
    "arrows",
    "extinction-tail",
    "growth",
    "fstc-check",
    "fstc-search",
    "op-demo",
    "sweep",
)

UNITS = {
    "delta": "rate (1/time)",
    "beta": "rate (1/time)",
    "horizon": "time",
    "height": "time",
    "half_width": "lattice units",
    "escape_radius": "lattice units",
    "cutoff": "lattice units (l1)",
    "value": "operation dependent",
}


class ConfigError(ValueError):
    """Invalid experiment configuration; carries the offending field."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


def load_config(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a mapping")
    return data


def _req(cfg: dict, field: str, types, section: str = "") -> Any:
    name = f"{section}.{field}" if section else field
    if field not in cfg:
        raise ConfigError(name, "required field missing")
    value = cfg[field]
    if not isinstance(value, types):
        raise ConfigError(name, f"expected {types}, got {type(value).__name__}")
    return value


def _opt(cfg: dict, field: str, types, default=None, section: str = ""):
    if field not in cfg or cfg[field] is None:
        return default
    return _req(cfg, field, types, section)


def _positive(value, name, allow_zero=False):
    if value < 0 or (value == 0 and not allow_zero):
        kind = "nonnegative" if allow_zero else "positive"
        raise ConfigError(name, f"must be {kind}, got {value}")
    return value


def build_kernel(cfg: dict) -> Kernel:
    section = _req(cfg, "kernel", dict)
    family = _req(section, "family", str, "kernel")
    d = _req(section, "dimension", int, "kernel")
    if d < 1:
        raise ConfigError("kernel.dimension", f"must be a positive integer, got {d}")
    cutoff = _opt(section, "cutoff", int, None, "kernel")
    sim_cutoff = _opt(section, "sim_cutoff", int, None, "kernel")
    try:
        if family == "power-law":
            alpha = _req(section, "alpha", (int, float), "kernel")
            beta = _req(section, "beta", (int, float), "kernel")
            if cutoff is None and alpha <= d:
                raise ConfigError("kernel.alpha", "summability violated: "
                                  f"alpha={alpha} <= dimension={d} with unbounded cutoff")
            return Kernel(dimension=d, family=family, alpha=float(alpha),
                          beta=float(beta), cutoff=cutoff, sim_cutoff=sim_cutoff)
        if family == "nearest-neighbor":
            beta = _req(section, "beta", (int, float), "kernel")
            return Kernel(dimension=d, family=family, beta=float(beta))
        if family == "finite-table":
            entries = _req(section, "entries", list, "kernel")
            table = {}
            for i, item in enumerate(entries):
                if (not isinstance(item, list) or len(item) != 2
                        or not isinstance(item[0], list)):
                    raise ConfigError(f"kernel.entries[{i}]",
                                      "expected [offset list, rate]")
                table[tuple(int(c) for c in item[0])] = float(item[1])
            kern = Kernel(dimension=d, family=family,
                          table=tuple(sorted(table.items())), cutoff=cutoff)
            return kern
    except InvalidKernelError as exc:
        raise ConfigError("kernel", str(exc)) from exc
    raise ConfigError("kernel.family", f"unknown family {family!r}")


def build_seed_set(cfg: dict, dimension: int) -> SeedSet:
    spec = cfg.get("seed_set", [[0] * dimension])
    if isinstance(spec, dict) and "cube" in spec:
        radius = spec["cube"]
        if not isinstance(radius, int) or radius < 0:
            raise ConfigError("seed_set.cube", f"radius must be >= 0, got {radius}")
        return SeedSet.cube(dimension, radius)
    if not isinstance(spec, list) or not spec:
        raise ConfigError("seed_set", "must be a nonempty list of lattice points")
    pts = []
    for i, p in enumerate(spec):
        if not isinstance(p, list) or len(p) != dimension:
            raise ConfigError(f"seed_set[{i}]",
                              f"expected a list of {dimension} integers")
        pts.append(tuple(int(c) for c in p))
    return SeedSet(frozenset(pts))


def _build_domain(section: dict, dimension: int):
    sites = _opt(section, "domain_sites", list, None, "process")
    dom_box = _opt(section, "domain_box", dict, None, "process")
    if sites is not None and dom_box is not None:
        raise ConfigError("process.domain_box", "give either domain_sites or domain_box")
    if sites is not None:
        pts = set()
        for i, p in enumerate(sites):
            if not isinstance(p, list) or len(p) != dimension:
                raise ConfigError(f"process.domain_sites[{i}]",
                                  f"expected a list of {dimension} integers")
            pts.add(tuple(int(c) for c in p))
        if not pts:
            raise ConfigError("process.domain_sites", "must be nonempty")
        return frozenset(pts)
    if dom_box is not None:
        hw = _req(dom_box, "half_width", (int, float), "process.domain_box")
        height = _req(dom_box, "height", (int, float), "process.domain_box")
        tilt = _opt(dom_box, "tilt", (int, float), 0.0, "process.domain_box")
        positive = _opt(dom_box, "positive", bool, False, "process.domain_box")
        tilts = (0.0,) * (dimension - 1) + (float(tilt),)
        return SpaceTimeBox((float(hw),) * dimension, float(height), tilts, positive)
    return None


def build_sim_config(cfg: dict, kernel: Kernel, *, allow_zero_delta=True) -> SimConfig:
    section = _req(cfg, "process", dict)
    delta = _req(section, "delta", (int, float), "process")
    _positive(delta, "process.delta", allow_zero=allow_zero_delta)
    horizon = _req(section, "horizon", (int, float), "process")
    if not (0 < horizon < math.inf):
        raise ConfigError("process.horizon", f"must be finite and positive, got {horizon}")
    escape = _opt(section, "escape_radius", int, None, "process")
    if escape is not None and escape < 1:
        raise ConfigError("process.escape_radius", f"must be >= 1, got {escape}")
    domain = _build_domain(section, kernel.dimension)
    seed = _opt(cfg, "seed", int, 0)
    try:
        return SimConfig(kernel=kernel, delta=float(delta), horizon=float(horizon),
                         domain=domain, escape_radius=escape, seed=seed)
    except ValueError as exc:
        raise ConfigError("process", str(exc)) from exc


@dataclass
class Experiment:
    """Validated configuration, ready to dispatch."""

    raw: dict
    name: str
    operation: str
    seed: int
    samples: int
    workers: int
    out: str | None


def validate_config(cfg: dict, operation: str | None = None) -> Experiment:
    """Check every precondition that can be checked without simulating."""
    name = _req(cfg, "experiment", str)
    if not name:
        raise ConfigError("experiment", "must be a nonempty string")
    op = operation or _req(cfg, "operation", str)
    if op not in OPERATIONS:
        raise ConfigError("operation", f"unknown operation {op!r}; "
                          f"expected one of {', '.join(OPERATIONS)}")
    if operation is not None and "operation" in cfg and cfg["operation"] != operation:
        raise ConfigError("operation", f"config says {cfg['operation']!r} "
                          f"but the {operation!r} command was invoked")
    seed = _opt(cfg, "seed", int, 0)
    if not (0 <= seed < 2**64):
        raise ConfigError("seed", "must fit in an unsigned 64-bit integer")
    samples = _opt(cfg, "samples", int, 1000)
    if samples < 1:
        raise ConfigError("samples", f"must be >= 1, got {samples}")
    workers = _opt(cfg, "workers", int, 1)
    if workers < 1:
        raise ConfigError("workers", f"must be >= 1, got {workers}")
    out = _opt(cfg, "out", str, None)

    # operation-specific validation, before any simulation
    kernel = None
    if op not in ("op-demo",):
        kernel = build_kernel(cfg)
    if op in ("simulate", "survival", "susceptibility", "extinction-tail"):
        build_sim_config(cfg, kernel)
        build_seed_set(cfg, kernel.dimension)
    if op == "delta-c":
        proto = cfg.get("protocol", {})
        tau = proto.get("survival_threshold", 0.02)
        if not (0 < tau < 1):
            raise ConfigError("protocol.survival_threshold",
                              f"must lie in (0, 1), got {tau}")
        for fld in ("horizon", "rel_tolerance"):
            if fld in proto and proto[fld] <= 0:
                raise ConfigError(f"protocol.{fld}", "must be positive")
        for fld in ("n_per_probe", "max_iters", "retry_factor"):
            if fld in proto and int(proto[fld]) < 1:
                raise ConfigError(f"protocol.{fld}", "must be >= 1")
        build_seed_set(cfg, kernel.dimension)
    if op == "upper-density":
        win = _req(cfg, "window", dict)
        hw = _req(win, "half_width", (int, float), "window")
        _positive(hw, "window.half_width", allow_zero=True)
        height = _req(win, "height", (int, float), "window")
        _positive(height, "window.height", allow_zero=True)
        delta = _req(_req(cfg, "process", dict), "delta", (int, float), "process")
        _positive(delta, "process.delta", allow_zero=True)
    if op == "arrows":
        sec = _req(cfg, "arrows", dict)
        _positive(_req(sec, "half_width", (int, float), "arrows"), "arrows.half_width")
        _positive(_req(sec, "height", (int, float), "arrows"), "arrows.height")
        build_sim_config(cfg, kernel)
        build_seed_set(cfg, kernel.dimension)
    if op == "growth":
        sec = _req(cfg, "growth", dict)
        theta = _opt(sec, "theta", (int, float), None, "growth")
        if theta is not None and theta < 0:
            raise ConfigError("growth.theta", f"must be >= 0, got {theta}")
        _positive(_opt(sec, "horizon", (int, float), 100.0, "growth"), "growth.horizon")
        delta = _req(_req(cfg, "process", dict), "delta", (int, float), "process")
        _positive(delta, "process.delta", allow_zero=True)
        build_seed_set(cfg, kernel.dimension)
    if op in ("fstc-check", "fstc-search"):
        sec = _req(cfg, "block" if op == "fstc-check" else "search", dict)
        eps = _opt(sec, "epsilon", (int, float), 0.1,
                   "block" if op == "fstc-check" else "search")
        if not (0 < eps < 1):
            raise ConfigError("epsilon", f"must lie in (0, 1), got {eps}")
        r = _opt(sec, "r", (int, float), 2.0)
        if r <= 1:
            raise ConfigError("r", f"shell scale must exceed 1, got {r}")
        if op == "fstc-check":
            cond = _opt(sec, "condition", str, "c1", "block")
            if cond not in ("c1", "c2", "c3", "c4"):
                raise ConfigError("block.condition", f"unknown condition {cond!r}")
            _positive(_req(sec, "half_width", (int, float), "block"),
                      "block.half_width", allow_zero=True)
            _positive(_req(sec, "height", (int, float), "block"),
                      "block.height", allow_zero=True)
            if cond in ("c2", "c4") and "face" not in sec:
                raise ConfigError("block.face", "required for c2/c4 checks")
        else:
            budget = _opt(sec, "budget", int, 10**9, "search")
            if budget < 1:
                raise ConfigError("search.budget", f"must be >= 1, got {budget}")
        delta = _req(_req(cfg, "process", dict), "delta", (int, float), "process")
        _positive(delta, "process.delta", allow_zero=True)
        build_seed_set(cfg, kernel.dimension)
    if op == "op-demo":
        sec = _req(cfg, "op", dict)
        p = _req(sec, "p", (int, float), "op")
        if not (0 <= p <= 1):
            raise ConfigError("op.p", f"must lie in [0, 1], got {p}")
        rows = _req(sec, "rows", int, "op")
        if rows < 1:
            raise ConfigError("op.rows", f"must be >= 1, got {rows}")
        width = _req(sec, "width", int, "op")
        if width < 1:
            raise ConfigError("op.width", f"must be >= 1, got {width}")
    if op == "sweep":
        sec = _req(cfg, "sweep", dict)
        param = _req(sec, "parameter", str, "sweep")
        if param not in ("delta", "cutoff"):
            raise ConfigError("sweep.parameter", f"must be delta or cutoff, got {param!r}")
        grid = _req(sec, "grid", list, "sweep")
        if not grid:
            raise ConfigError("sweep.grid", "grid must be nonempty")
        inner = _opt(sec, "operation", str, "survival", "sweep")
        if inner not in ("survival", "susceptibility"):
            raise ConfigError("sweep.operation",
                              f"must be survival or susceptibility, got {inner!r}")
        if param == "cutoff":
            for i, k in enumerate(grid):
                if not isinstance(k, int) or k < 1:
                    raise ConfigError(f"sweep.grid[{i}]",
                                      f"cutoff levels must be positive integers, got {k}")
        else:
            for i, d in enumerate(grid):
                if not isinstance(d, (int, float)) or d < 0:
                    raise ConfigError(f"sweep.grid[{i}]",
                                      f"delta values must be >= 0, got {d}")
        build_sim_config(cfg, kernel)
        build_seed_set(cfg, kernel.dimension)
    if op == "simulate":
        sec = cfg.get("dump", {})
        mode = sec.get("mode", "trajectory") if isinstance(sec, dict) else None
        if mode not in ("trajectory", "window"):
            raise ConfigError("dump.mode", "must be trajectory or window")

    return Experiment(raw=cfg, name=name, operation=op, seed=seed,
                      samples=samples, workers=workers, out=out)
