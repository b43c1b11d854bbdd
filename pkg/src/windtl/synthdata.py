"""Reproducible synthetic wind farms, NWP series and power observations.

Wind is an AR(1) latent Gaussian mapped through a Weibull quantile transform;
terrain sets the Weibull scale. Weather-model series are correlated
perturbations of a shared latent truth (per-model constant ws100 bias plus
white noise), which is what makes NWP-change experiments possible. Power is
the physical curve on the truth features with multiplicative lognormal noise
scaled by the farm's turbulence, zeroed inside shut-off/maintenance windows.
"""

from __future__ import annotations

import csv
import math
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from .baseline import RHO0, air_density, physical_power
from .types import (
    FEATURE_NAMES,
    FarmConfig,
    LifecycleEvent,
    Terrain,
    TimeSeriesDataset,
    ValidationError,
    hourly_timestamps,
    substream,
    timestamp_to_iso,
    validate_events,
)

#: Documented per-terrain parameter ranges. ``weibull_scale`` (m/s) fixes the
#: marginal wind distribution; uniform ranges feed generate_farm_config.
#: Turbulence ranges are disjoint where ordering is part of the contract
#: (forest strictly above offshore).
TERRAIN_TABLE: dict[Terrain, dict] = {
    Terrain.OFFSHORE: {
        "weibull_scale": 11.0,
        "turbulence": (0.1, 0.5),
        "v_rated": (11.85, 12.15),
        "lat": (53.0, 56.0),
        "lon": (3.0, 9.0),
    },
    Terrain.ONSHORE: {
        "weibull_scale": 8.5,
        "turbulence": (0.4, 1.2),
        "v_rated": (11.35, 11.65),
        "lat": (48.0, 54.0),
        "lon": (6.0, 15.0),
    },
    Terrain.FARMLAND: {
        "weibull_scale": 8.0,
        "turbulence": (0.5, 1.0),
        "v_rated": (11.35, 11.65),
        "lat": (48.0, 54.0),
        "lon": (6.0, 15.0),
    },
    Terrain.MOUNTAIN: {
        "weibull_scale": 9.0,
        "turbulence": (1.0, 2.0),
        "v_rated": (11.85, 12.15),
        "lat": (46.0, 48.0),
        "lon": (7.0, 13.0),
    },
    Terrain.FOREST: {
        "weibull_scale": 6.0,
        "turbulence": (1.5, 2.5),
        "v_rated": (10.85, 11.15),
        "lat": (47.0, 52.0),
        "lon": (7.0, 14.0),
    },
}

#: Ranges shared by all terrains. Same-terrain farms deploy similar turbine
#: classes, so the curve parameters vary in narrow bands; storm-rated
#: cut-out speeds keep the shutdown cliff out of the operative wind range.
ROTOR_AREA_RANGE = (5000.0, 12000.0)  # m^2
RATED_POWER_RANGE = (2000.0, 5000.0)  # kW
V_CUT_IN_RANGE = (2.9, 3.1)  # m/s
V_CUT_OUT_RANGE = (28.0, 30.0)  # m/s

WEIBULL_SHAPE = 2.0
AR_COEF = 0.95

#: Per-NWP-model perturbation of the latent truth.
NWP_BIAS_RANGE = (-0.5, 0.5)  # constant ws100 offset per model id, m/s
NWP_WS_NOISE = 0.4  # white noise on ws100, m/s

#: Power observation noise: sigma = POWER_NOISE_COEF * turbulence_scale.
POWER_NOISE_COEF = 0.05

#: Reserved nwp_model_id of the unperturbed latent series.
TRUTH_MODEL_ID = "truth"

#: Default first timestamp of generated series.
DEFAULT_START = "2021-01-01T00:00:00"

CSV_HEADER = ("timestamp",) + FEATURE_NAMES + ("lead_time", "power")


def generate_farm_config(seed: int, terrain: Terrain) -> FarmConfig:
    """Draw a farm from the documented per-terrain ranges (deterministic)."""
    terrain = Terrain(terrain)
    rng = substream(seed, "farm-config", terrain)
    row = TERRAIN_TABLE[terrain]
    v_rated = rng.uniform(*row["v_rated"])
    return FarmConfig(
        farm_id=f"{terrain.value}-{seed}",
        terrain=terrain,
        rotor_area=float(rng.uniform(*ROTOR_AREA_RANGE)),
        rated_power=float(rng.uniform(*RATED_POWER_RANGE)),
        v_cut_in=float(rng.uniform(*V_CUT_IN_RANGE)),
        v_rated=float(v_rated),
        v_cut_out=float(rng.uniform(*V_CUT_OUT_RANGE)),
        location=(float(rng.uniform(*row["lat"])), float(rng.uniform(*row["lon"]))),
        turbulence_scale=float(rng.uniform(*row["turbulence"])),
    )


def _ar1(rng: np.random.Generator, n: int, coef: float = AR_COEF) -> np.ndarray:
    """Stationary AR(1) with N(0,1) marginals."""
    eps = rng.standard_normal(n)
    z = np.empty(n)
    z[0] = eps[0]
    scale = math.sqrt(1.0 - coef * coef)
    for t in range(1, n):
        z[t] = coef * z[t - 1] + scale * eps[t]
    return z


def _weibull_from_gaussian(z: np.ndarray, scale: float, shape: float = WEIBULL_SHAPE) -> np.ndarray:
    u = np.clip(ndtr(z), 1e-12, 1.0 - 1e-12)
    return scale * (-np.log1p(-u)) ** (1.0 / shape)


def generate_truth_series(
    config: FarmConfig, n_steps: int, seed: int, start=DEFAULT_START
) -> TimeSeriesDataset:
    """Latent weather truth at the farm's location (nwp_model_id="truth")."""
    if n_steps < 1:
        raise ValidationError("n_steps must be >= 1")
    rng = substream(seed, "truth", config.farm_id)
    ts = hourly_timestamps(start, n_steps)
    hod = ts.astype("datetime64[h]").astype(np.int64) % 24
    doy = ts.astype("datetime64[D]").astype(np.int64) % 365

    scale = TERRAIN_TABLE[config.terrain]["weibull_scale"]
    ws100 = _weibull_from_gaussian(_ar1(rng, n_steps), scale)
    # tight shear coupling: ws10 is a genuinely informative second wind view
    ws10 = np.maximum(0.0, 0.72 * ws100 * (1.0 + 0.02 * rng.standard_normal(n_steps)))

    theta = np.cumsum(0.10 * rng.standard_normal(n_steps)) + rng.uniform(0, 2 * np.pi)
    wdir_sin, wdir_cos = np.sin(theta), np.cos(theta)

    altitude_drop = 25.0 if config.terrain is Terrain.MOUNTAIN else 0.0
    pressure = 1013.0 - altitude_drop + 8.0 * _ar1(rng, n_steps)
    temperature = (
        283.0
        + 8.0 * np.sin(2 * np.pi * (doy - 105) / 365.0)
        + 4.0 * np.sin(2 * np.pi * (hod - 9) / 24.0)
        + 1.5 * _ar1(rng, n_steps)
    )
    humidity = 1.0 / (1.0 + np.exp(-1.2 * _ar1(rng, n_steps)))

    features = np.column_stack([ws100, ws10, wdir_sin, wdir_cos, pressure, temperature, humidity])
    # Day-ahead convention: issued at midnight for the following day.
    lead_time = 24.0 + hod.astype(float)
    return TimeSeriesDataset(
        farm_id=config.farm_id,
        nwp_model_id=TRUTH_MODEL_ID,
        timestamps=ts,
        features=features,
        lead_time=lead_time,
        power=None,
    )


def perturb_for_model(
    truth: TimeSeriesDataset, nwp_model_id: str, seed: int
) -> TimeSeriesDataset:
    """Model-specific view of the truth: constant ws100 bias plus white noise."""
    bias_rng = substream(seed, "nwp-bias", nwp_model_id)
    bias = bias_rng.uniform(*NWP_BIAS_RANGE)
    rng = substream(seed, "nwp-noise", truth.farm_id, nwp_model_id)
    n = truth.n

    f = truth.features.copy()
    f[:, 0] = np.maximum(0.0, f[:, 0] + bias + NWP_WS_NOISE * rng.standard_normal(n))
    f[:, 1] = np.maximum(0.0, f[:, 1] + 0.2 * rng.standard_normal(n))
    theta = np.arctan2(f[:, 2], f[:, 3]) + 0.05 * rng.standard_normal(n)
    f[:, 2], f[:, 3] = np.sin(theta), np.cos(theta)
    f[:, 4] = f[:, 4] + 0.5 * rng.standard_normal(n)
    f[:, 5] = f[:, 5] + 0.3 * rng.standard_normal(n)
    f[:, 6] = np.clip(f[:, 6] + 0.02 * rng.standard_normal(n), 0.0, 1.0)

    return replace(truth, nwp_model_id=nwp_model_id, features=f, power=None)


def generate_nwp_series(
    config: FarmConfig, n_steps: int, nwp_model_id: str, seed: int, start=DEFAULT_START
) -> TimeSeriesDataset:
    """One weather model's forecast series for the farm (no power labels)."""
    if n_steps < 1:
        raise ValidationError("n_steps must be >= 1")
    truth = generate_truth_series(config, n_steps, seed, start)
    return perturb_for_model(truth, nwp_model_id, seed)


def generate_power_series(
    config: FarmConfig,
    nwp_truth: TimeSeriesDataset,
    events: Sequence[LifecycleEvent],
    seed: int,
) -> TimeSeriesDataset:
    """Observed power from the latent truth, with lifecycle events applied.

    Noise is multiplicative lognormal, sigma = 0.05 * turbulence_scale, with
    the Gaussian factor truncated at 3 sigma so the perturbation stays
    bounded; a farm with turbulence_scale 0 generates noise-free power.
    """
    if nwp_truth.has_power:
        raise ValidationError("nwp_truth must not already carry power")
    validate_events(list(events))
    rng = substream(seed, "power", config.farm_id)
    n = nwp_truth.n

    ws = nwp_truth.column("ws100")
    rho = air_density(nwp_truth.column("pressure"), nwp_truth.column("temperature"))
    power = np.asarray(physical_power(ws, rho, config), dtype=float)

    sigma = POWER_NOISE_COEF * config.turbulence_scale
    if sigma > 0:
        factor = np.exp(sigma * np.clip(rng.standard_normal(n), -3.0, 3.0))
        power = power * factor
    power = np.clip(power, 0.0, 1.0)

    for event in events:
        power[event.zero_mask(nwp_truth.timestamps)] = 0.0

    return nwp_truth.with_power(power)


def attach_power(features_ds: TimeSeriesDataset, labeled_ds: TimeSeriesDataset) -> TimeSeriesDataset:
    """Attach observed power to a (possibly perturbed) feature series.

    Both series must be aligned on identical timestamps; this is how model
    training data is assembled (model-specific features, measured power).
    """
    if not labeled_ds.has_power:
        raise ValidationError("labeled_ds carries no power")
    if features_ds.n != labeled_ds.n or not np.array_equal(
        features_ds.timestamps, labeled_ds.timestamps
    ):
        raise ValidationError("series are not aligned on identical timestamps")
    return features_ds.with_power(labeled_ds.power.copy())


def save_dataset_csv(dataset: TimeSeriesDataset, path) -> None:
    """Write one (farm, nwp_model) series; power cells empty when unlabeled."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        power = dataset.power
        for i in range(dataset.n):
            row = [timestamp_to_iso(dataset.timestamps[i])]
            row.extend(repr(float(v)) for v in dataset.features[i])
            row.append(repr(float(dataset.lead_time[i])))
            if power is None or np.isnan(power[i]):
                row.append("")
            else:
                row.append(repr(float(power[i])))
            writer.writerow(row)


def load_dataset_csv(path, farm_id: str, nwp_model_id: str) -> TimeSeriesDataset:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CSV_HEADER:
            raise ValidationError(f"unexpected CSV header in {path}")
        rows = list(reader)

    n = len(rows)
    ts = np.array([np.datetime64(r[0].rstrip("Z"), "s") for r in rows])
    features = np.array([[float(v) for v in r[1 : 1 + len(FEATURE_NAMES)]] for r in rows])
    lead = np.array([float(r[-2]) for r in rows])
    raw_power = [r[-1] for r in rows]
    if all(cell == "" for cell in raw_power):
        power = None
    else:
        power = np.array([float(c) if c != "" else np.nan for c in raw_power])
    if n == 0:
        features = features.reshape(0, len(FEATURE_NAMES))
    return TimeSeriesDataset(
        farm_id=farm_id,
        nwp_model_id=nwp_model_id,
        timestamps=ts,
        features=features,
        lead_time=lead,
        power=power,
    )
