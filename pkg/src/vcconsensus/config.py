"""Scenario configuration: JSON schema, loading and assumption checks."""

from __future__ import annotations

import copy
import hashlib
import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np
from numpy.typing import NDArray

from .constraints import estimate_rho_bounds, set_from_descriptor
from .errors import (
    ConsensusError,
    FloorConflict,
    GraphError,
    OriginNotMember,
    ParseError,
    ValidationError,
)
from .graphs import (
    GraphSchedule,
    GraphSnapshot,
    PeriodicSchedule,
    RandomSchedule,
    first_disconnected_window,
    union_graph,
)
from .protocol import design_initial_gains, normalize_weights, resolve_policy

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
BUNDLED = ("paper_section5",)

_comments = {"^_": {}}

_shape = {
    "type": "object",
    "required": ["type"],
    "properties": {
        "type": {"enum": ["ball", "box", "union", "intersection"]},
        "radius": {"type": "number", "exclusiveMinimum": 0},
        "center": {"type": "array", "items": {"type": "number"}},
        "lower": {"type": "array", "items": {"type": "number"}},
        "upper": {"type": "array", "items": {"type": "number"}},
        "members": {"type": "array", "minItems": 1, "items": {"$ref": "#/$defs/shape"}},
    },
    "patternProperties": _comments,
    "additionalProperties": False,
    "allOf": [
        {"if": {"properties": {"type": {"const": "ball"}}}, "then": {"required": ["radius"]}},
        {"if": {"properties": {"type": {"const": "box"}}}, "then": {"required": ["lower", "upper"]}},
        {"if": {"properties": {"type": {"enum": ["union", "intersection"]}}},
         "then": {"required": ["members"]}},
    ],
}

_vector = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_edge = {
    "type": "array",
    "prefixItems": [
        {"type": "integer", "minimum": 0},
        {"type": "integer", "minimum": 0},
        {"type": "number", "exclusiveMinimum": 0},
        {"type": "integer", "minimum": 0},
    ],
    "minItems": 4,
    "maxItems": 4,
}

SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "$defs": {"shape": _shape},
    "type": "object",
    "required": ["schema_version", "n", "r", "T", "horizon", "agents", "sets", "schedule"],
    "patternProperties": _comments,
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "n": {"type": "integer", "minimum": 1},
        "r": {"type": "integer", "minimum": 1},
        "T": {"type": "number", "exclusiveMinimum": 0},
        "horizon": {"type": "integer", "minimum": 0},
        "seed": {"type": "integer", "minimum": 0},
        "initial_positions": {
            "type": "object",
            "properties": {
                "distribution": {"const": "uniform"},
                "low": {"type": "number"},
                "high": {"type": "number"},
            },
            "patternProperties": _comments,
            "additionalProperties": False,
        },
        "sets": {"type": "object", "minProperties": 1,
                 "additionalProperties": {"$ref": "#/$defs/shape"}},
        "agents": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["velocity", "set", "p0"],
                "properties": {
                    "position": _vector,
                    "velocity": _vector,
                    "set": {"type": "string"},
                    "p0": {"type": "number"},
                },
                "patternProperties": _comments,
                "additionalProperties": False,
            },
        },
        "schedule": {
            "type": "object",
            "required": ["type", "eta", "mu_c", "max_delay"],
            "properties": {
                "type": {"enum": ["periodic", "random"]},
                "snapshots": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "required": ["edges"],
                        "properties": {"edges": {"type": "array", "items": _edge}},
                        "patternProperties": _comments,
                        "additionalProperties": False,
                    },
                },
                "eta": {"type": "integer", "minimum": 1},
                "mu_c": {"type": "number", "exclusiveMinimum": 0},
                "max_delay": {"type": "integer", "minimum": 0},
                "window_length": {"type": ["integer", "null"], "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "weight_range": {"type": "array", "items": {"type": "number"},
                                 "minItems": 2, "maxItems": 2},
                "extra_edge_prob": {"type": "number", "minimum": 0, "maximum": 1},
                "time_varying_delays": {"type": "boolean"},
            },
            "patternProperties": _comments,
            "additionalProperties": False,
            "allOf": [
                {"if": {"properties": {"type": {"const": "periodic"}}},
                 "then": {"required": ["snapshots"]}},
            ],
        },
        "gain_policy": {
            "oneOf": [
                {"const": "previous_b"},
                {"type": "object", "required": ["name", "weight"],
                 "properties": {"name": {"const": "blend"},
                                "weight": {"type": "number", "minimum": 0, "maximum": 1}},
                 "additionalProperties": False},
            ]
        },
        "safety_margin": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "analysis": {
            "type": "object",
            "properties": {
                "dual_sim": {"type": "boolean"},
                "lemma_checks": {"type": "boolean"},
                "rate_fit": {"type": "boolean"},
                "n_hat": {"type": ["integer", "null"], "minimum": 1},
            },
            "patternProperties": _comments,
            "additionalProperties": False,
        },
        "output": {
            "type": "object",
            "properties": {"dir": {"type": "string"}},
            "patternProperties": _comments,
            "additionalProperties": False,
        },
    },
}

_validator = jsonschema.Draft202012Validator(SCHEMA)


@dataclass
class AssumptionCheck:
    assumption: str
    entity: str
    passed: bool
    detail: str = ""
    value: float | None = None


@dataclass
class ScenarioConfig:
    raw: dict
    name: str
    n: int
    r: int
    T: float
    horizon: int
    seed: int
    positions: NDArray
    velocities: NDArray
    set_names: list
    agent_sets: list
    p0: NDArray
    schedule: GraphSchedule
    gain_policy: Any
    safety_margin: float
    analysis: dict
    output_dir: str
    config_hash: str
    checks: list = field(default_factory=list)
    source: str = ""

    @property
    def violations(self) -> list[AssumptionCheck]:
        return [c for c in self.checks if not c.passed]

    @property
    def rho_under(self) -> NDArray:
        """Per-agent minimum reach measured by the velocity-set check."""
        return np.array([c.value for c in self.checks if c.assumption == "velocity set"])


def canonical_json(raw: dict) -> str:
    return json.dumps(raw, sort_keys=True, separators=(",", ":"))


def config_hash(raw: dict) -> str:
    return hashlib.sha256(canonical_json(raw).encode()).hexdigest()


def read_raw(source) -> tuple[dict, str]:
    """Parse a path or a bundled scenario name into a dict."""
    if isinstance(source, dict):
        return copy.deepcopy(source), "<dict>"
    name = str(source)
    if name in BUNDLED:
        text = resources.files("vcconsensus").joinpath("data", f"{name}.json").read_text()
        where = f"bundled:{name}"
    else:
        path = Path(name)
        if not path.is_file():
            raise ParseError("no such file or bundled scenario", name)
        text = path.read_text()
        where = str(path)
    try:
        return json.loads(text), where
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, f"{where}:{exc.lineno}:{exc.colno}") from exc


def _location(err: jsonschema.ValidationError) -> str:
    out = "$"
    for part in err.absolute_path:
        out += f"[{part}]" if isinstance(part, int) else f".{part}"
    return out


def _schedule(raw: dict, n: int) -> GraphSchedule:
    s = raw["schedule"]
    common = dict(eta=s["eta"], mu_c=s["mu_c"], max_delay=s["max_delay"])
    if s["type"] == "periodic":
        snaps = []
        for m, snap in enumerate(s["snapshots"]):
            try:
                snaps.append(GraphSnapshot.from_edges(n, snap["edges"]))
            except GraphError as exc:
                raise ParseError(str(exc), f"$.schedule.snapshots[{m}]") from exc
        return PeriodicSchedule(snaps, window_length=s.get("window_length"), **common)
    kw = {k: s[k] for k in ("weight_range", "extra_edge_prob", "time_varying_delays") if k in s}
    if "weight_range" in kw:
        kw["weight_range"] = tuple(kw["weight_range"])
    return RandomSchedule(n, seed=s.get("seed", raw.get("seed", 0)), **common, **kw)


def _positions(raw: dict, n: int, r: int, seed: int) -> NDArray:
    init = raw.get("initial_positions", {})
    rng = np.random.default_rng(seed)
    drawn = rng.uniform(init.get("low", -5.0), init.get("high", 5.0), size=(n, r))
    for i, agent in enumerate(raw["agents"]):
        if "position" in agent:
            drawn[i] = agent["position"]
    return drawn


def check_assumptions(cfg: ScenarioConfig) -> list[AssumptionCheck]:
    """Run every pre-check and return one record per check."""
    checks = []
    for i, cset in enumerate(cfg.agent_sets):
        hi, lo = estimate_rho_bounds(cset)
        ok = lo > 0
        checks.append(AssumptionCheck("velocity set", f"agent {i} set {cfg.set_names[i]!r}", ok,
                                      f"reach over 360 directions in [{lo:.6g}, {hi:.6g}]", lo))

    pT = cfg.p0 * cfg.T
    for i, val in enumerate(pT):
        checks.append(AssumptionCheck("initial gain", f"agent {i}", bool(0 < val < 1),
                                      f"p0*T = {val:.6g}"))
    if np.all((pT > 0) & (pT < 1)):
        _, d = design_initial_gains(cfg.T, cfg.p0, cfg.safety_margin)
        horizon = max(cfg.horizon, cfg.schedule.eta)
        span = horizon
        if isinstance(cfg.schedule, PeriodicSchedule):
            span = min(horizon, len(cfg.schedule.snapshots))
        floor_ok, delay_ok = True, True
        floor_detail, delay_detail = "", ""
        for k in range(span):
            g = cfg.schedule.snapshot(k)
            try:
                g.check(cfg.schedule.mu_c, cfg.schedule.max_delay)
            except GraphError as exc:
                if "delay" in str(exc):
                    delay_ok, delay_detail = False, f"k={k}: {exc}"
                else:
                    floor_ok, floor_detail = False, f"k={k}: {exc}"
                break
            try:
                normalize_weights(g, d, cfg.schedule.mu_c)
            except FloorConflict as exc:
                floor_ok, floor_detail = False, f"k={k}: {exc}"
                break
        checks.append(AssumptionCheck("weight floor", "gain caps and weight floor", floor_ok,
                                      floor_detail or f"d = {np.round(d, 6).tolist()}"))
        checks.append(AssumptionCheck("delay bound", "schedule", delay_ok,
                                      delay_detail or f"all delays <= {cfg.schedule.max_delay}"))

    horizon = max(cfg.horizon, cfg.schedule.eta)
    try:
        bad = first_disconnected_window(cfg.schedule, horizon)
        if bad is None:
            checks.append(AssumptionCheck("joint connectivity", "schedule", True,
                                          f"every window up to k={horizon} has a spanning tree"))
        else:
            k0, k1 = bad
            u = union_graph([cfg.schedule.snapshot(k) for k in range(k0, k1)])
            unreached = _unreachable_hint(u)
            checks.append(AssumptionCheck("joint connectivity", f"window [{k0}, {k1})", False,
                                          f"union has no directed spanning tree; {unreached}"))
    except GraphError as exc:
        checks.append(AssumptionCheck("joint connectivity", "schedule", False, str(exc)))
    return checks


def _unreachable_hint(u: GraphSnapshot) -> str:
    isolated = [i for i in range(u.n) if not u.weights[i].any()]
    if len(isolated) > 1:
        return f"nodes {isolated} receive no edges"
    return f"node in-degrees {np.count_nonzero(u.weights, axis=1).tolist()}"


def load_config(source, seed: int | None = None, horizon: int | None = None,
                allow_violations: bool = False, overrides: dict | None = None) -> ScenarioConfig:
    """Parse, validate and check a scenario.

    ``source`` is a path, a bundled scenario name or an already parsed dict.
    ``seed`` and ``horizon`` override the file (and therefore change the hash).
    Failed assumption checks raise :class:`ValidationError` unless
    ``allow_violations`` is set, in which case they are logged and kept in
    ``config.checks``.
    """
    raw, where = read_raw(source)
    if seed is not None:
        raw["seed"] = int(seed)
    if horizon is not None:
        raw["horizon"] = int(horizon)
    if overrides:
        raw.update(copy.deepcopy(overrides))

    errors = sorted(_validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ParseError(err.message, f"{where} {_location(err)}")

    n, r = raw["n"], raw["r"]
    if len(raw["agents"]) != n:
        raise ParseError(f"{len(raw['agents'])} agents listed, n = {n}", f"{where} $.agents")
    for i, agent in enumerate(raw["agents"]):
        for key in ("position", "velocity"):
            if key in agent and len(agent[key]) != r:
                raise ParseError(f"length {len(agent[key])}, r = {r}",
                                 f"{where} $.agents[{i}].{key}")
        if agent["set"] not in raw["sets"]:
            raise ParseError(f"unknown set {agent['set']!r}", f"{where} $.agents[{i}].set")

    sets = {}
    for name, desc in raw["sets"].items():
        try:
            sets[name] = set_from_descriptor(desc, r)
        except OriginNotMember as exc:
            # the operator is undefined without 0 in V, so this cannot be waived
            raise ValidationError("velocity set", f"set {name!r}", str(exc)) from exc
        except ConsensusError as exc:
            raise ParseError(str(exc), f"{where} $.sets.{name}") from exc
        except (ValueError, TypeError) as exc:
            raise ParseError(str(exc), f"{where} $.sets.{name}") from exc

    schedule = _schedule(raw, n)
    seed_val = int(raw.get("seed", 0))
    cfg = ScenarioConfig(
        raw=raw,
        name=raw.get("name", Path(where).stem),
        n=n,
        r=r,
        T=float(raw["T"]),
        horizon=int(raw["horizon"]),
        seed=seed_val,
        positions=_positions(raw, n, r, seed_val),
        velocities=np.array([a["velocity"] for a in raw["agents"]], dtype=float),
        set_names=[a["set"] for a in raw["agents"]],
        agent_sets=[sets[a["set"]] for a in raw["agents"]],
        p0=np.array([a["p0"] for a in raw["agents"]], dtype=float),
        schedule=schedule,
        gain_policy=resolve_policy(raw.get("gain_policy", "previous_b")),
        safety_margin=float(raw.get("safety_margin", 0.02)),
        analysis={"dual_sim": True, "lemma_checks": True, "rate_fit": True, "n_hat": None,
                  **raw.get("analysis", {})},
        output_dir=raw.get("output", {}).get("dir", f"out/{raw.get('name', 'scenario')}"),
        config_hash=config_hash(raw),
        source=where,
    )
    cfg.checks = check_assumptions(cfg)
    for c in cfg.violations:
        if not allow_violations:
            raise ValidationError(c.assumption, c.entity, c.detail)
        log.warning("assumption waived: [%s] %s: %s", c.assumption, c.entity, c.detail)
    return cfg
