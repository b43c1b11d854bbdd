"""Physical power-curve model: the no-training fallback and skill reference.

Normalized cubic curve between cut-in and rated speed with a hard cap at
rated power, scaled by air density relative to the reference density.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .types import FarmConfig, TimeSeriesDataset

#: Reference air density (kg/m^3) at which the curve reaches 1.0 at v_rated.
RHO0 = 1.225

#: Specific gas constant of dry air, J/(kg K).
R_DRY = 287.05


def air_density(pressure_hpa, temperature_k):
    """Ideal-gas air density from pressure (hPa) and temperature (K)."""
    p = np.asarray(pressure_hpa, dtype=float)
    t = np.asarray(temperature_k, dtype=float)
    if np.any(t <= 0):
        raise ValueError("temperature must be positive (Kelvin)")
    return p * 100.0 / (R_DRY * t)


def physical_power(v, rho, config: FarmConfig, rho0: float = RHO0):
    """Normalized power for wind speed v (m/s) and air density rho (kg/m^3).

    Zero below cut-in and at/above cut-out; otherwise
    min(1, (rho/rho0) * (v/v_rated)^3). Accepts scalars or arrays.
    """
    v_arr = np.asarray(v, dtype=float)
    rho_arr = np.asarray(rho, dtype=float)
    if np.any(rho_arr <= 0):
        raise ValueError("air density must be positive")
    if np.any(v_arr < 0):
        raise ValueError("wind speed must be >= 0")
    p = np.minimum(1.0, (rho_arr / rho0) * (v_arr / config.v_rated) ** 3)
    p = np.where((v_arr < config.v_cut_in) | (v_arr >= config.v_cut_out), 0.0, p)
    if np.isscalar(v) and np.isscalar(rho):
        return float(p)
    return p


@dataclass(frozen=True)
class PhysicalModel:
    """Physical curve bound to one farm; usable as an ensemble member."""

    config: FarmConfig
    rho0: float = RHO0

    def __post_init__(self):
        if self.rho0 <= 0:
            raise ValueError("rho0 must be positive")

    def predict_series(self, dataset: TimeSeriesDataset) -> np.ndarray:
        return forecast_physical(self, dataset)


def forecast_physical(model: PhysicalModel, dataset: TimeSeriesDataset) -> np.ndarray:
    """Elementwise physical power over (ws100, density derived from p/T)."""
    if dataset.n == 0:
        return np.zeros(0, dtype=float)
    ws = dataset.column("ws100")
    rho = air_density(dataset.column("pressure"), dataset.column("temperature"))
    return np.asarray(physical_power(ws, rho, model.config, model.rho0), dtype=float)
