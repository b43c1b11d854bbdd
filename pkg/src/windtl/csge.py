"""Coopetitive soft-gating ensemble.

Member predictions are fused with the renormalized elementwise product of
three weightings: global (windowed RMSE), local (errors on the k nearest
stored weather situations), and lead-time (per-horizon-bucket RMSE). Low
error earns high weight through the soft gate; the exponent eta sharpens or
flattens the competition.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .nnet import fit_scaler, standardize
from .types import TimeSeriesDataset, ValidationError, timestamp_to_iso

logger = logging.getLogger(__name__)

#: Forecast-horizon buckets (hours): [0,6), [6,12), [12,24), [24,48), [48,inf).
LEADTIME_BUCKETS = (6.0, 12.0, 24.0, 48.0)

DEFAULT_ETA = 2.0
DEFAULT_EPSILON = 1e-6
DEFAULT_WINDOW = 2160  # sliding history, 90 days hourly
DEFAULT_NEIGHBORS = 50


def soft_gate(errors: Sequence[float], eta: float = DEFAULT_ETA, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Map error scores to simplex weights: w_j ~ ((sum_k e_k + eps) / (e_j + eps))^eta."""
    errors = np.asarray(errors, dtype=float)
    if errors.size < 1:
        raise ValidationError("need at least one error entry")
    if np.any(errors < 0) or eta < 0 or epsilon <= 0:
        raise ValidationError("errors and eta must be >= 0, epsilon > 0")
    raw = ((errors.sum() + epsilon) / (errors + epsilon)) ** eta
    return raw / raw.sum()


@dataclass
class EnsemblePrediction:
    """Fused output with full attribution."""

    member_ids: list[str]
    raw: np.ndarray  # per-member predictions
    weights: np.ndarray  # final combined weights (simplex)
    global_weights: np.ndarray
    local_weights: np.ndarray
    leadtime_weights: np.ndarray
    fused_raw: float  # dot(weights, raw), before clipping
    fused: float  # clipped to [0, 1]

    def to_json_dict(self) -> dict:
        return {
            "member_ids": self.member_ids,
            "raw": self.raw.tolist(),
            "weights": self.weights.tolist(),
            "global_weights": self.global_weights.tolist(),
            "local_weights": self.local_weights.tolist(),
            "leadtime_weights": self.leadtime_weights.tolist(),
            "fused_raw": self.fused_raw,
            "fused": self.fused,
        }


class CsgeEnsemble:
    """Members plus global / local / lead-time error statistics.

    Reads (predict, *_weights) are safe concurrently; fit_global/update need
    exclusive access (single writer).
    """

    def __init__(
        self,
        members: Sequence[tuple[str, object]],
        eta: float = DEFAULT_ETA,
        epsilon: float = DEFAULT_EPSILON,
        window: int = DEFAULT_WINDOW,
        neighbors: int = DEFAULT_NEIGHBORS,
    ):
        if not members:
            raise ValidationError("ensemble needs at least one member")
        ids = [mid for mid, _ in members]
        if len(set(ids)) != len(ids):
            raise ValidationError("member ids must be unique")
        if eta < 0 or epsilon <= 0 or window < 1 or neighbors < 1:
            raise ValidationError("bad gating parameters")
        self.member_ids: list[str] = ids
        self.predictors: dict[str, object] = dict(members)
        self.eta = float(eta)
        self.epsilon = float(epsilon)
        self.window = int(window)
        self.neighbors = int(neighbors)
        self.flags: dict[str, str] = {}
        self._x_mean: np.ndarray | None = None
        self._x_std: np.ndarray | None = None
        # sliding history of (standardized features, lead time, |error| per member)
        self._feats = np.zeros((0, 0))
        self._lead = np.zeros(0)
        self._abs_err = np.zeros((0, len(ids)))
        self._ts = np.zeros(0, dtype="datetime64[s]")
        self.global_errors: np.ndarray | None = None
        self._bucket_errors: np.ndarray | None = None  # (n_buckets+1, n_members) RMSE
        self._bucket_counts: np.ndarray | None = None

    @property
    def n_members(self) -> int:
        return len(self.member_ids)

    @property
    def fitted(self) -> bool:
        return self.global_errors is not None

    def replace_predictor(self, member_id: str, predictor: object) -> None:
        """Swap a member's model (e.g. after retraining); error history stays."""
        if member_id not in self.predictors:
            raise ValidationError(f"unknown member {member_id!r}")
        self.predictors[member_id] = predictor

    # -- fitting ---------------------------------------------------------------

    def _member_errors(self, reference: TimeSeriesDataset) -> np.ndarray:
        """(n, n_members) absolute errors; failed members get worst * 2."""
        mask = reference.labeled_mask
        if not mask.any():
            raise ValidationError("reference dataset has no labels")
        y = reference.power[mask]
        errs = np.full((int(mask.sum()), self.n_members), np.nan)
        for j, mid in enumerate(self.member_ids):
            try:
                pred = np.asarray(self.predictors[mid].predict_series(reference), dtype=float)[mask]
                if pred.shape != y.shape or not np.all(np.isfinite(pred)):
                    raise ValueError("non-finite or misshaped prediction")
                errs[:, j] = np.abs(pred - y)
            except Exception as exc:  # noqa: BLE001 - member failure is data, not fatal
                self.flags[mid] = f"member failed during fit: {exc}"
                logger.warning("ensemble member %s failed: %s", mid, exc)
        if np.all(np.isnan(errs)):
            raise ValidationError("every ensemble member failed on the reference data")
        worst = np.nanmax(np.sqrt(np.nanmean(errs**2, axis=0)))
        for j in range(self.n_members):
            if np.isnan(errs[:, j]).all():
                errs[:, j] = worst * 2.0
        return errs

    def fit_global(self, reference: TimeSeriesDataset) -> "CsgeEnsemble":
        """Initialize the error history from a labeled reference set."""
        if reference.n == 0:
            raise ValidationError("reference dataset is empty")
        errs = self._member_errors(reference)
        mask = reference.labeled_mask
        self._x_mean, self._x_std = fit_scaler(reference.features[mask])
        self._feats = standardize(reference.features[mask], self._x_mean, self._x_std)
        self._lead = reference.lead_time[mask].astype(float)
        self._abs_err = errs
        self._ts = reference.timestamps[mask]
        self._trim_and_refresh()
        return self

    def update(self, new_observations: TimeSeriesDataset) -> "CsgeEnsemble":
        """Append fresh labeled records and recompute windowed statistics."""
        if not self.fitted:
            raise ValidationError("fit_global must run before update")
        if new_observations.n == 0:
            raise ValidationError("no observations supplied")
        errs = self._member_errors(new_observations)
        mask = new_observations.labeled_mask
        self._feats = np.vstack(
            [self._feats, standardize(new_observations.features[mask], self._x_mean, self._x_std)]
        )
        self._lead = np.concatenate([self._lead, new_observations.lead_time[mask].astype(float)])
        self._abs_err = np.vstack([self._abs_err, errs])
        self._ts = np.concatenate([self._ts, new_observations.timestamps[mask]])
        self._trim_and_refresh()
        return self

    def _trim_and_refresh(self) -> None:
        if len(self._ts) > self.window:
            keep = slice(len(self._ts) - self.window, None)
            self._feats = self._feats[keep]
            self._lead = self._lead[keep]
            self._abs_err = self._abs_err[keep]
            self._ts = self._ts[keep]
        self.global_errors = np.sqrt(np.mean(self._abs_err**2, axis=0))
        buckets = np.searchsorted(LEADTIME_BUCKETS, self._lead, side="right")
        n_buckets = len(LEADTIME_BUCKETS) + 1
        self._bucket_errors = np.zeros((n_buckets, self.n_members))
        self._bucket_counts = np.zeros(n_buckets, dtype=int)
        for b in range(n_buckets):
            sel = buckets == b
            self._bucket_counts[b] = int(sel.sum())
            if self._bucket_counts[b]:
                self._bucket_errors[b] = np.sqrt(np.mean(self._abs_err[sel] ** 2, axis=0))

    # -- weightings --------------------------------------------------------------

    def global_weights(self) -> np.ndarray:
        if not self.fitted:
            raise ValidationError("ensemble is not fitted")
        return soft_gate(self.global_errors, self.eta, self.epsilon)

    def local_weights(self, query_features: np.ndarray, k: int | None = None) -> np.ndarray:
        """Gate on mean absolute error over the k nearest stored situations."""
        k = self.neighbors if k is None else int(k)
        if k < 1:
            raise ValidationError("k must be >= 1")
        if not self.fitted or self._feats.shape[0] == 0:
            logger.debug("local index empty; falling back to uniform weights")
            return np.full(self.n_members, 1.0 / self.n_members)
        q = standardize(np.asarray(query_features, dtype=float), self._x_mean, self._x_std)
        dist = np.linalg.norm(self._feats - q, axis=1)
        k = min(k, dist.size)
        nearest = np.argpartition(dist, k - 1)[:k]
        local_err = self._abs_err[nearest].mean(axis=0)
        return soft_gate(local_err, self.eta, self.epsilon)

    def leadtime_weights(self, horizon: float) -> np.ndarray:
        """Gate on the horizon bucket's RMSE; unseen buckets give uniform."""
        if horizon < 0:
            raise ValidationError("horizon must be >= 0")
        if not self.fitted:
            return np.full(self.n_members, 1.0 / self.n_members)
        b = int(np.searchsorted(LEADTIME_BUCKETS, horizon, side="right"))
        if self._bucket_counts[b] == 0:
            return np.full(self.n_members, 1.0 / self.n_members)
        return soft_gate(self._bucket_errors[b], self.eta, self.epsilon)

    # -- prediction ----------------------------------------------------------------

    def _query_dataset(self, features: np.ndarray, timestamp, horizon: float) -> TimeSeriesDataset:
        return TimeSeriesDataset(
            farm_id="query",
            nwp_model_id="query",
            timestamps=np.array([timestamp], dtype="datetime64[s]"),
            features=np.asarray(features, dtype=float)[None, :],
            lead_time=np.array([float(horizon)]),
        )

    def predict(
        self,
        query_features: np.ndarray,
        horizon: float,
        k: int | None = None,
        timestamp=np.datetime64("2021-01-01T00:00:00"),
    ) -> EnsemblePrediction:
        """Fuse member predictions for one weather situation."""
        if not self.fitted:
            raise ValidationError("ensemble is not fitted")
        query = self._query_dataset(query_features, timestamp, horizon)
        raw = np.full(self.n_members, np.nan)
        for j, mid in enumerate(self.member_ids):
            try:
                raw[j] = float(np.asarray(self.predictors[mid].predict_series(query), dtype=float)[0])
            except Exception as exc:  # noqa: BLE001
                self.flags[mid] = f"member failed during predict: {exc}"
                logger.warning("ensemble member %s failed at predict: %s", mid, exc)
        alive = np.isfinite(raw)
        if not alive.any():
            raise RuntimeError("every ensemble member failed to predict")

        combined = self.global_weights() * self.local_weights(query_features, k) * self.leadtime_weights(horizon)
        combined = np.where(alive, combined, 0.0)
        combined = combined / combined.sum()
        fused_raw = float(np.dot(combined, np.where(alive, raw, 0.0)))
        return EnsemblePrediction(
            member_ids=list(self.member_ids),
            raw=raw,
            weights=combined,
            global_weights=self.global_weights(),
            local_weights=self.local_weights(query_features, k),
            leadtime_weights=self.leadtime_weights(horizon),
            fused_raw=fused_raw,
            fused=float(np.clip(fused_raw, 0.0, 1.0)),
        )

    def predict_series(self, dataset: TimeSeriesDataset, k: int | None = None) -> np.ndarray:
        """Fused predictions for every record of a dataset.

        Member models run once over the whole series; only the local and
        lead-time weights are computed per record.
        """
        if not self.fitted:
            raise ValidationError("ensemble is not fitted")
        n = dataset.n
        raw_all = np.full((n, self.n_members), np.nan)
        for j, mid in enumerate(self.member_ids):
            try:
                pred = np.asarray(self.predictors[mid].predict_series(dataset), dtype=float)
                if pred.shape == (n,):
                    raw_all[:, j] = pred
            except Exception as exc:  # noqa: BLE001
                self.flags[mid] = f"member failed during predict: {exc}"
                logger.warning("ensemble member %s failed at predict: %s", mid, exc)
        if not np.isfinite(raw_all).any():
            raise RuntimeError("every ensemble member failed to predict")
        gw = self.global_weights()
        out = np.empty(n)
        for i in range(n):
            combined = gw * self.local_weights(dataset.features[i], k) * self.leadtime_weights(float(dataset.lead_time[i]))
            alive = np.isfinite(raw_all[i])
            combined = np.where(alive, combined, 0.0)
            combined = combined / combined.sum()
            out[i] = float(np.clip(np.dot(combined, np.where(alive, raw_all[i], 0.0)), 0.0, 1.0))
        return out

    # -- persistence -----------------------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "format": "windtl-csge-1",
            "member_ids": list(self.member_ids),
            "eta": self.eta,
            "epsilon": self.epsilon,
            "window": self.window,
            "neighbors": self.neighbors,
            "x_mean": None if self._x_mean is None else self._x_mean.tolist(),
            "x_std": None if self._x_std is None else self._x_std.tolist(),
            "features": self._feats.tolist(),
            "lead_time": self._lead.tolist(),
            "abs_errors": self._abs_err.tolist(),
            "timestamps": [timestamp_to_iso(t) for t in self._ts],
            "flags": dict(self.flags),
        }

    @staticmethod
    def from_json_dict(state: dict, predictors: dict[str, object]) -> "CsgeEnsemble":
        if state.get("format") != "windtl-csge-1":
            raise ValidationError("not a serialized soft-gating ensemble")
        ids = state["member_ids"]
        missing = [mid for mid in ids if mid not in predictors]
        if missing:
            raise ValidationError(f"predictors missing for members {missing}")
        ens = CsgeEnsemble(
            members=[(mid, predictors[mid]) for mid in ids],
            eta=state["eta"],
            epsilon=state["epsilon"],
            window=state["window"],
            neighbors=state["neighbors"],
        )
        ens.flags = dict(state["flags"])
        if state["x_mean"] is not None:
            ens._x_mean = np.array(state["x_mean"], dtype=float)
            ens._x_std = np.array(state["x_std"], dtype=float)
            ens._feats = np.array(state["features"], dtype=float).reshape(-1, len(state["x_mean"]))
            ens._lead = np.array(state["lead_time"], dtype=float)
            ens._abs_err = np.array(state["abs_errors"], dtype=float).reshape(-1, len(ids))
            ens._ts = np.array([np.datetime64(t.rstrip("Z"), "s") for t in state["timestamps"]])
            ens._trim_and_refresh()
        return ens
