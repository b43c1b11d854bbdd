"""Source-farm pre-selection: terrain rules, marginal-distance ranking, and
permutation feature influence.

Similarity between sites is measured on the ws100 marginal only; wind speed
at hub height dominates every other input in the influence rankings, so a
single cheap 1-D distance carries most of the signal.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .metrics import rmse
from .nnet import DenseNetwork, resolve_inputs
from .types import FarmConfig, Terrain, TimeSeriesDataset, ValidationError


@dataclass(frozen=True)
class RankEntry:
    source_farm_id: str
    distance: float
    terrain_match: bool


@dataclass(frozen=True)
class SimilarityRanking:
    target_farm_id: str
    entries: tuple[RankEntry, ...]

    def __post_init__(self):
        dists = [e.distance for e in self.entries]
        if any(not np.isfinite(d) or d < 0 for d in dists):
            raise ValidationError("distances must be finite and >= 0")
        if any(dists[i] > dists[i + 1] for i in range(len(dists) - 1)):
            raise ValidationError("entries must be sorted ascending by distance")

    def to_json_dict(self) -> dict:
        return {
            "target_farm_id": self.target_farm_id,
            "entries": [
                {
                    "source_farm_id": e.source_farm_id,
                    "distance": e.distance,
                    "terrain_match": e.terrain_match,
                }
                for e in self.entries
            ],
        }


def _empirical_quantiles(sample: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Inverted-CDF quantiles; on its own midpoint grid this returns the
    sorted sample itself."""
    s = np.sort(sample)
    idx = np.ceil(q * s.size - 1e-9).astype(int) - 1
    return s[np.clip(idx, 0, s.size - 1)]


def wasserstein1(sample_a, sample_b) -> float:
    """1-D Wasserstein-1 via aligned empirical quantiles.

    Both samples are resampled to the midpoint quantile grid of size
    max(|a|, |b|); for equal sizes this equals exact optimal transport
    (mean |sorted difference|), and W(X, X + c) = |c| holds exactly.
    """
    a = np.asarray(sample_a, dtype=float).ravel()
    b = np.asarray(sample_b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValidationError("samples must be non-empty")
    m = max(a.size, b.size)
    q = (np.arange(m) + 0.5) / m
    return float(np.mean(np.abs(_empirical_quantiles(a, q) - _empirical_quantiles(b, q))))


def terrain_filter(
    pool: Sequence[FarmConfig], target_terrain: Terrain
) -> tuple[list[FarmConfig], bool]:
    """Farms with matching terrain; falls back to the full pool (flagged
    False) rather than returning an empty selection."""
    target_terrain = Terrain(target_terrain)
    matches = [cfg for cfg in pool if cfg.terrain is target_terrain]
    if matches:
        return matches, True
    return list(pool), False


def rank_sources(
    pool: Sequence[tuple[FarmConfig, TimeSeriesDataset]],
    target_config: FarmConfig,
    target_nwp: TimeSeriesDataset,
    k: int,
) -> SimilarityRanking:
    """Terrain filter, then rank by ws100 marginal distance; top-k.

    Ties break lexicographically on farm_id for determinism.
    """
    if not pool:
        raise ValidationError("source pool must be non-empty")
    if k < 1:
        raise ValidationError("k must be >= 1")
    if target_nwp.n == 0 or any(ds.n == 0 for _, ds in pool):
        raise ValidationError("datasets must be non-empty")

    selected, matched = terrain_filter([cfg for cfg, _ in pool], target_config.terrain)
    selected_ids = {cfg.farm_id for cfg in selected}
    target_ws = target_nwp.column("ws100")

    scored = []
    for cfg, ds in pool:
        if cfg.farm_id not in selected_ids:
            continue
        scored.append((wasserstein1(ds.column("ws100"), target_ws), cfg.farm_id))
    scored.sort(key=lambda t: (t[0], t[1]))
    entries = tuple(
        RankEntry(source_farm_id=fid, distance=d, terrain_match=matched)
        for d, fid in scored[:k]
    )
    return SimilarityRanking(target_farm_id=target_config.farm_id, entries=entries)


def rank_feature_influence(
    model: DenseNetwork,
    data: TimeSeriesDataset,
    seed: int,
    n_shuffles: int = 5,
) -> list[tuple[str, float]]:
    """Permutation importance: RMSE increase when one input column is
    shuffled, averaged over n_shuffles draws, clamped at zero, sorted
    descending."""
    if not data.has_power or data.n_labeled == 0:
        raise ValidationError("data must carry power labels")
    mask = data.labeled_mask
    X = resolve_inputs(model, data)[mask]
    y = data.power[mask]
    names = list(data.feature_names)
    if X.shape[1] == len(names) + 2:
        names += ["hod_sin", "hod_cos"]

    base = rmse(model.predict(X), y)
    rng = np.random.default_rng(seed)
    importances = []
    for j, name in enumerate(names):
        increases = []
        for _ in range(n_shuffles):
            shuffled = X.copy()
            shuffled[:, j] = shuffled[rng.permutation(X.shape[0]), j]
            increases.append(rmse(model.predict(shuffled), y) - base)
        importances.append((name, max(0.0, float(np.mean(increases)))))
    importances.sort(key=lambda t: (-t[1], t[0]))
    return importances
