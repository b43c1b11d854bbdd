"""Scenario definitions for lifecycle simulations.

A scenario is a single JSON document (schema version "1") describing the
farm pool, the target, the simulated horizon, events, and which forecasting
methods to evaluate. Validation errors carry the path of the offending
field.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .types import LifecycleEvent, Terrain, ValidationError

SCHEMA_VERSION = "1"

#: Methods the lifecycle runner knows how to evaluate. ``target_only`` (plain
#: training on the target's own labels) is always reported once labels exist;
#: it is the traditional-ML yardstick for the transfer methods.
KNOWN_METHODS = (
    "physical",
    "wp1_naive",
    "wp1_universal",
    "csge",
    "self_train",
    "mtl",
    "multicross",
)

#: Tunables a scenario may override; everything else is fixed in code.
HYPER_DEFAULTS: dict = {
    "epochs": 20,
    "batch_size": 64,
    "learning_rate": 0.05,
    "early_stop_patience": 6,
    "replicas": 3,
    "selection_k": 3,
    "code_dim": 4,
    "conf_threshold": 0.9,
    "self_train_rounds": 1,
    "eta": 2.0,
    "neighbors": 50,
    "window": 2160,
    "lambda_consistency": 0.1,
    "source_history_months": 6,
    "target_nwp_history_months": 3,
}


class ScenarioError(ValidationError):
    """Scenario validation failure; ``path`` points at the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 1
    pool: tuple[tuple[Terrain, int], ...] = ((Terrain.OFFSHORE, 5),)
    target_terrain: Terrain = Terrain.OFFSHORE
    months: int = 12
    nwp_models: tuple[str, ...] = ("nwpA",)
    events: tuple[LifecycleEvent, ...] = ()
    methods: tuple[str, ...] = ("physical", "wp1_naive", "wp1_universal", "csge", "self_train", "mtl")
    hyper: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.months < 0:
            raise ScenarioError("scenario.months", "must be >= 0")
        if sum(count for _, count in self.pool) < 1:
            raise ScenarioError("scenario.pool", "total farm count must be >= 1")
        for i, (_, count) in enumerate(self.pool):
            if count < 1:
                raise ScenarioError(f"scenario.pool[{i}].count", "must be >= 1")
        if not self.methods:
            raise ScenarioError("scenario.methods", "must not be empty")
        for i, m in enumerate(self.methods):
            if m not in KNOWN_METHODS:
                raise ScenarioError(f"scenario.methods[{i}]", f"unknown method {m!r}")
        if not self.nwp_models:
            raise ScenarioError("scenario.nwp_models", "need at least one weather model")
        if len(set(self.nwp_models)) != len(self.nwp_models):
            raise ScenarioError("scenario.nwp_models", "weather model ids must be unique")
        if "multicross" in self.methods and len(self.nwp_models) < 2:
            raise ScenarioError("scenario.methods", "multicross needs >= 2 nwp_models")
        for key in self.hyper:
            if key not in HYPER_DEFAULTS:
                raise ScenarioError(f"scenario.hyper_overrides.{key}", "unknown hyper-parameter")

    def resolved_hyper(self) -> dict:
        merged = dict(HYPER_DEFAULTS)
        merged.update(self.hyper)
        return merged

    def to_json_dict(self) -> dict:
        return {
            "version": SCHEMA_VERSION,
            "seed": self.seed,
            "pool": [{"terrain": t.value, "count": c} for t, c in self.pool],
            "target_terrain": self.target_terrain.value,
            "months": self.months,
            "nwp_models": list(self.nwp_models),
            "events": [e.to_json_dict() for e in self.events],
            "methods": list(self.methods),
            "hyper_overrides": dict(self.hyper),
        }

    @staticmethod
    def from_json_dict(d: Mapping) -> "ScenarioConfig":
        if not isinstance(d, Mapping):
            raise ScenarioError("scenario", "must be a JSON object")
        version = d.get("version", SCHEMA_VERSION)
        if str(version) != SCHEMA_VERSION:
            raise ScenarioError("scenario.version", f"unsupported version {version!r}")

        def terrain_at(path: str, value) -> Terrain:
            try:
                return Terrain(value)
            except ValueError:
                raise ScenarioError(path, f"unknown terrain {value!r}") from None

        pool = []
        for i, entry in enumerate(d.get("pool", [])):
            if not isinstance(entry, Mapping) or "terrain" not in entry or "count" not in entry:
                raise ScenarioError(f"scenario.pool[{i}]", "expected {terrain, count}")
            pool.append((terrain_at(f"scenario.pool[{i}].terrain", entry["terrain"]), int(entry["count"])))

        events = []
        for i, entry in enumerate(d.get("events", [])):
            try:
                events.append(LifecycleEvent.from_json_dict(entry))
            except (ValidationError, KeyError, TypeError) as exc:
                raise ScenarioError(f"scenario.events[{i}]", str(exc)) from None

        try:
            months = int(d.get("months", 12))
        except (TypeError, ValueError):
            raise ScenarioError("scenario.months", "must be an integer") from None

        return ScenarioConfig(
            seed=int(d.get("seed", 1)),
            pool=tuple(pool) if pool else ScenarioConfig().pool,
            target_terrain=terrain_at("scenario.target_terrain", d.get("target_terrain", "offshore")),
            months=months,
            nwp_models=tuple(d.get("nwp_models", ("nwpA",))),
            events=tuple(events),
            methods=tuple(d.get("methods", ScenarioConfig().methods)),
            hyper=dict(d.get("hyper_overrides", {})),
        )


def load_scenario(path) -> ScenarioConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError("scenario", f"invalid JSON: {exc}") from None
    return ScenarioConfig.from_json_dict(raw)


def default_scenario(**overrides) -> ScenarioConfig:
    """The bundled 12-month scenario: 5 offshore sources and a night
    shut-off switched on 120 days in (i.e. during the growing phase)."""
    from .types import EventKind, as_timestamp

    shutoff_start = as_timestamp("2021-01-01T00:00:00") + np.timedelta64(120 * 24 * 3600, "s")
    base: dict = dict(
        seed=1,
        pool=((Terrain.OFFSHORE, 5),),
        target_terrain=Terrain.OFFSHORE,
        months=12,
        nwp_models=("nwpA",),
        events=(
            LifecycleEvent(
                kind=EventKind.NIGHT_SHUTOFF,
                start=shutoff_start,
                end=None,
                params={"h_start": 22, "h_end": 6},
            ),
        ),
    )
    base.update(overrides)
    return ScenarioConfig(**base)
