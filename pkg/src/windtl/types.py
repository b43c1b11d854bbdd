"""Core domain types shared across the wind transfer-learning toolkit."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

#: Column order of the NWP feature matrix, matching the CSV schema.
FEATURE_NAMES: tuple[str, ...] = (
    "ws100",
    "ws10",
    "wdir_sin",
    "wdir_cos",
    "pressure",
    "temperature",
    "humidity",
)

#: Learned models additionally receive a cyclic hour-of-day encoding derived
#: from the timestamps (clock-dependent effects such as night shut-off are not
#: recoverable from weather features alone).
MODEL_INPUT_NAMES: tuple[str, ...] = FEATURE_NAMES + ("hod_sin", "hod_cos")

#: Desk-scale convention: one month is exactly 30 days of hourly records.
HOURS_PER_MONTH = 720


class ValidationError(ValueError):
    """An input violates a documented contract."""


class TrainingError(RuntimeError):
    """An optimization run cannot continue (e.g. NaN loss)."""


class Terrain(str, enum.Enum):
    ONSHORE = "onshore"
    OFFSHORE = "offshore"
    FOREST = "forest"
    FARMLAND = "farmland"
    MOUNTAIN = "mountain"


class EventKind(str, enum.Enum):
    NIGHT_SHUTOFF = "night_shutoff"
    MAINTENANCE = "maintenance"
    NWP_MODEL_CHANGE = "nwp_model_change"


def as_timestamp(value) -> np.datetime64:
    """Coerce an ISO string / datetime64 to second-resolution datetime64."""
    ts = np.datetime64(str(value).rstrip("Z"), "s")
    return ts


def timestamp_to_iso(ts: np.datetime64) -> str:
    return np.datetime_as_string(np.datetime64(ts, "s"), unit="s") + "Z"


@dataclass(frozen=True)
class FarmConfig:
    """Static description of one wind farm."""

    farm_id: str
    terrain: Terrain
    rotor_area: float  # m^2
    rated_power: float  # kW
    v_cut_in: float  # m/s
    v_rated: float  # m/s
    v_cut_out: float  # m/s
    location: tuple[float, float]  # (lat, lon) in degrees
    turbulence_scale: float  # dimensionless, >= 0

    def __post_init__(self):
        if not (0.0 < self.v_cut_in < self.v_rated < self.v_cut_out):
            raise ValidationError(
                f"{self.farm_id}: need 0 < v_cut_in < v_rated < v_cut_out, got "
                f"({self.v_cut_in}, {self.v_rated}, {self.v_cut_out})"
            )
        if self.rotor_area <= 0 or self.rated_power <= 0:
            raise ValidationError(f"{self.farm_id}: rotor_area and rated_power must be positive")
        if self.turbulence_scale < 0:
            raise ValidationError(f"{self.farm_id}: turbulence_scale must be >= 0")

    def to_json_dict(self) -> dict:
        d = {
            "farm_id": self.farm_id,
            "terrain": self.terrain.value,
            "rotor_area": self.rotor_area,
            "rated_power": self.rated_power,
            "v_cut_in": self.v_cut_in,
            "v_rated": self.v_rated,
            "v_cut_out": self.v_cut_out,
            "location": list(self.location),
            "turbulence_scale": self.turbulence_scale,
        }
        return d

    @staticmethod
    def from_json_dict(d: Mapping) -> "FarmConfig":
        return FarmConfig(
            farm_id=d["farm_id"],
            terrain=Terrain(d["terrain"]),
            rotor_area=float(d["rotor_area"]),
            rated_power=float(d["rated_power"]),
            v_cut_in=float(d["v_cut_in"]),
            v_rated=float(d["v_rated"]),
            v_cut_out=float(d["v_cut_out"]),
            location=(float(d["location"][0]), float(d["location"][1])),
            turbulence_scale=float(d["turbulence_scale"]),
        )


@dataclass(frozen=True)
class NwpFeatureVector:
    """One weather-model record; mirrors one row of the feature matrix."""

    ws100: float
    ws10: float
    wdir_sin: float
    wdir_cos: float
    pressure: float  # hPa
    temperature: float  # K
    humidity: float  # [0, 1]

    def __post_init__(self):
        if self.ws100 < 0 or self.ws10 < 0:
            raise ValidationError("wind speeds must be >= 0")
        if abs(self.wdir_sin**2 + self.wdir_cos**2 - 1.0) > 1e-9:
            raise ValidationError("wind direction (sin, cos) must lie on the unit circle")
        if not 0.0 <= self.humidity <= 1.0:
            raise ValidationError("humidity must be in [0, 1]")

    def to_array(self) -> np.ndarray:
        return np.array(
            [self.ws100, self.ws10, self.wdir_sin, self.wdir_cos, self.pressure, self.temperature, self.humidity],
            dtype=float,
        )

    @staticmethod
    def from_array(row: np.ndarray) -> "NwpFeatureVector":
        row = np.asarray(row, dtype=float)
        if row.shape != (len(FEATURE_NAMES),):
            raise ValidationError(f"expected {len(FEATURE_NAMES)} features, got shape {row.shape}")
        return NwpFeatureVector(*row.tolist())


@dataclass(frozen=True)
class TimeSeriesDataset:
    """Aligned hourly NWP features and optional normalized power for one farm.

    ``power`` may be None (fully unlabeled) or contain NaN for individual
    missing observations. Arrays are treated as immutable values.
    """

    farm_id: str
    nwp_model_id: str
    timestamps: np.ndarray  # datetime64[s], strictly increasing
    features: np.ndarray  # (n, n_features) float64
    lead_time: np.ndarray  # (n,) float64, forecast horizon in hours
    power: np.ndarray | None = None  # (n,) float64 in [0, 1]; NaN marks missing
    feature_names: tuple[str, ...] = FEATURE_NAMES

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype="datetime64[s]")
        feats = np.asarray(self.features, dtype=float)
        lead = np.asarray(self.lead_time, dtype=float)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "lead_time", lead)
        if feats.ndim != 2 or feats.shape[1] != len(self.feature_names):
            raise ValidationError(
                f"features must be (n, {len(self.feature_names)}), got {feats.shape}"
            )
        n = len(ts)
        if feats.shape[0] != n or lead.shape != (n,):
            raise ValidationError("timestamps, features and lead_time lengths must match")
        if n > 1 and not np.all(np.diff(ts).astype(np.int64) > 0):
            raise ValidationError("timestamps must be strictly increasing")
        if np.any(lead < 0):
            raise ValidationError("lead_time must be >= 0")
        if self.power is not None:
            p = np.asarray(self.power, dtype=float)
            object.__setattr__(self, "power", p)
            if p.shape != (n,):
                raise ValidationError("power length must match timestamps")
            present = p[~np.isnan(p)]
            if present.size and (present.min() < 0.0 or present.max() > 1.0):
                raise ValidationError("present power values must lie in [0, 1]")

    @property
    def n(self) -> int:
        return len(self.timestamps)

    def __len__(self) -> int:
        return self.n

    @property
    def has_power(self) -> bool:
        return self.power is not None

    @property
    def labeled_mask(self) -> np.ndarray:
        if self.power is None:
            return np.zeros(self.n, dtype=bool)
        return ~np.isnan(self.power)

    @property
    def n_labeled(self) -> int:
        return int(self.labeled_mask.sum())

    def column(self, name: str) -> np.ndarray:
        try:
            j = self.feature_names.index(name)
        except ValueError:
            raise ValidationError(f"dataset has no feature {name!r}") from None
        return self.features[:, j]

    def hour_of_day(self) -> np.ndarray:
        return self.timestamps.astype("datetime64[h]").astype(np.int64) % 24

    def model_inputs(self) -> np.ndarray:
        """Feature matrix plus cyclic hour-of-day encoding, as seen by models."""
        angle = 2.0 * np.pi * self.hour_of_day() / 24.0
        return np.column_stack([self.features, np.sin(angle), np.cos(angle)])

    def take(self, index: np.ndarray) -> "TimeSeriesDataset":
        index = np.asarray(index)
        return replace(
            self,
            timestamps=self.timestamps[index],
            features=self.features[index],
            lead_time=self.lead_time[index],
            power=None if self.power is None else self.power[index],
        )

    def slice(self, start: int, stop: int | None = None) -> "TimeSeriesDataset":
        return self.take(np.arange(self.n)[start:stop])

    def until(self, ts) -> "TimeSeriesDataset":
        """Records strictly before ``ts``."""
        return self.take(self.timestamps < as_timestamp(ts))

    def between(self, start, stop) -> "TimeSeriesDataset":
        """Records with start <= timestamp < stop."""
        t0, t1 = as_timestamp(start), as_timestamp(stop)
        return self.take((self.timestamps >= t0) & (self.timestamps < t1))

    def labeled_only(self) -> "TimeSeriesDataset":
        return self.take(self.labeled_mask)

    def with_power(self, power: np.ndarray) -> "TimeSeriesDataset":
        return replace(self, power=np.asarray(power, dtype=float))

    def without_power(self) -> "TimeSeriesDataset":
        return replace(self, power=None)


@dataclass(frozen=True)
class LifecycleEvent:
    """Operational change in a farm's data stream.

    params: night_shutoff -> {"h_start": int, "h_end": int} daily clock
    interval [h_start, h_end), wrap-around allowed; nwp_model_change ->
    {"nwp_model_id": str}.
    """

    kind: EventKind
    start: np.datetime64
    end: np.datetime64 | None = None
    params: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "start", as_timestamp(self.start))
        if self.end is not None:
            object.__setattr__(self, "end", as_timestamp(self.end))
            if not self.start < self.end:
                raise ValidationError("event start must precede end")
        if self.kind is EventKind.NIGHT_SHUTOFF:
            try:
                h0, h1 = float(self.params["h_start"]), float(self.params["h_end"])
            except KeyError:
                raise ValidationError("night_shutoff requires params h_start and h_end") from None
            if not (0 <= h0 < 24 and 0 <= h1 < 24):
                raise ValidationError("night_shutoff clock hours must lie in [0, 24)")
            if h0 == h1:
                raise ValidationError("night_shutoff clock interval must be non-empty")
        if self.kind is EventKind.NWP_MODEL_CHANGE and "nwp_model_id" not in self.params:
            raise ValidationError("nwp_model_change requires params.nwp_model_id")

    def clock_interval(self) -> tuple[int, int]:
        return int(float(self.params["h_start"])), int(float(self.params["h_end"]))

    def span_mask(self, timestamps: np.ndarray) -> np.ndarray:
        """True where a timestamp falls inside [start, end)."""
        ts = np.asarray(timestamps, dtype="datetime64[s]")
        mask = ts >= self.start
        if self.end is not None:
            mask &= ts < self.end
        return mask

    def zero_mask(self, timestamps: np.ndarray) -> np.ndarray:
        """True where this event forces generated power to zero."""
        ts = np.asarray(timestamps, dtype="datetime64[s]")
        if self.kind is EventKind.MAINTENANCE:
            return self.span_mask(ts)
        if self.kind is EventKind.NIGHT_SHUTOFF:
            h0, h1 = self.clock_interval()
            hod = ts.astype("datetime64[h]").astype(np.int64) % 24
            if h0 < h1:
                clock = (hod >= h0) & (hod < h1)
            else:  # wraps midnight
                clock = (hod >= h0) | (hod < h1)
            return clock & self.span_mask(ts)
        return np.zeros(len(ts), dtype=bool)

    def to_json_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "start": timestamp_to_iso(self.start),
            "end": None if self.end is None else timestamp_to_iso(self.end),
            "params": dict(self.params),
        }

    @staticmethod
    def from_json_dict(d: Mapping) -> "LifecycleEvent":
        return LifecycleEvent(
            kind=EventKind(d["kind"]),
            start=as_timestamp(d["start"]),
            end=None if d.get("end") is None else as_timestamp(d["end"]),
            params=dict(d.get("params", {})),
        )


def hourly_timestamps(start, n_steps: int) -> np.ndarray:
    """n_steps hourly instants beginning at ``start``."""
    t0 = as_timestamp(start)
    return t0 + np.arange(n_steps) * np.timedelta64(3600, "s")


def model_input_matrix(timestamps: np.ndarray, features: np.ndarray) -> np.ndarray:
    """Model input rows for loose (timestamps, features) arrays."""
    ts = np.asarray(timestamps, dtype="datetime64[s]")
    hod = ts.astype("datetime64[h]").astype(np.int64) % 24
    angle = 2.0 * np.pi * hod / 24.0
    return np.column_stack([np.asarray(features, dtype=float), np.sin(angle), np.cos(angle)])


def substream(seed: int, *tokens) -> np.random.Generator:
    """Deterministic named RNG substream; tokens may be strings, enums or ints."""
    import zlib

    keys = [int(seed) & 0xFFFFFFFF]
    for tok in tokens:
        if isinstance(tok, enum.Enum):
            tok = tok.value
        if isinstance(tok, str):
            keys.append(zlib.crc32(tok.encode("utf-8")))
        else:
            keys.append(int(tok) & 0xFFFFFFFF)
    return np.random.default_rng(keys)


def validate_events(events: Sequence[LifecycleEvent]) -> None:
    """Reject overlapping same-kind events that prescribe contradictory params.

    Overlapping maintenance windows are allowed (the union is well defined).
    """

    def spans_overlap(a: LifecycleEvent, b: LifecycleEvent) -> bool:
        a_end = a.end if a.end is not None else np.datetime64("9999-01-01", "s")
        b_end = b.end if b.end is not None else np.datetime64("9999-01-01", "s")
        return a.start < b_end and b.start < a_end

    for i, ev_a in enumerate(events):
        for ev_b in events[i + 1 :]:
            if ev_a.kind is not ev_b.kind or ev_a.kind is EventKind.MAINTENANCE:
                continue
            if spans_overlap(ev_a, ev_b) and dict(ev_a.params) != dict(ev_b.params):
                raise ValidationError(
                    f"overlapping {ev_a.kind.value} events with contradictory params"
                )
