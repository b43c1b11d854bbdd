"""Transfer methods for new farms: pseudo-labeling, a shared-representation
universal model, confidence-gated self-training, hard-parameter-sharing
multi-task networks, and multi-cross learning across weather models.

Model inputs everywhere are the NWP features plus the cyclic hour-of-day
encoding (see types.MODEL_INPUT_NAMES).
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .metrics import rmse
from .nnet import (
    DenseNetwork,
    TrainConfig,
    _act,
    _backward,
    _chrono_split,
    _forward_cache,
    _mse_loss_grad,
    _Sgd,
    _apply_lr_schedule,
    encode,
    fit_scaler,
    init_network,
    standardize,
    train_arrays,
    train_autoencoder,
)
from .types import FarmConfig, TimeSeriesDataset, TrainingError, ValidationError

#: Default layer widths; the shared trunk ends in the representation that
#: task heads consume.
TRUNK_HIDDEN = (64, 64)
HEAD_HIDDEN = (16,)
ABSTRACTION_DIM = 16
ADAPTER_HIDDEN = (16,)
SPATIAL_HIDDEN = (64,)
DEFAULT_CODE_DIM = 4
DEFAULT_REPLICAS = 5


def worker_count() -> int:
    """Worker cap for independent trainings (env WINDTL_THREADS)."""
    env = os.environ.get("WINDTL_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def default_regressor(input_dim: int, seed: int) -> DenseNetwork:
    """Power regressor: tanh hidden stack, linear head; series predictions
    are clipped to [0, 1] at the surface."""
    dims = [input_dim, *TRUNK_HIDDEN, *HEAD_HIDDEN, 1]
    acts = ["tanh"] * (len(dims) - 2) + ["identity"]
    return init_network(dims, acts, seed)


def _labeled_arrays(data: TimeSeriesDataset) -> tuple[np.ndarray, np.ndarray]:
    mask = data.labeled_mask
    if not mask.any():
        raise ValidationError(f"dataset {data.farm_id} has no labeled records")
    return data.model_inputs()[mask], data.power[mask]


# -- instance transfer: pseudo-labels from replica ensembles -----------------


@dataclass
class ReplicaSet:
    """Same-task models differing only in training seed.

    ``s_max`` is the 95th percentile of the replica prediction standard
    deviation on the source validation split; it calibrates the mapping from
    disagreement to confidence.
    """

    models: list[DenseNetwork]
    s_max: float
    source_farm_id: str = ""

    def __post_init__(self):
        if len(self.models) < 2:
            raise ValidationError("a replica set needs at least 2 models")
        if self.s_max < 0:
            raise ValidationError("s_max must be >= 0")

    def predict_stack(self, X: np.ndarray) -> np.ndarray:
        return np.stack([m.predict(X) for m in self.models])


@dataclass
class PseudoLabeledDataset:
    base: TimeSeriesDataset
    confidence: np.ndarray
    source_model_id: str

    def __post_init__(self):
        self.confidence = np.asarray(self.confidence, dtype=float)
        if self.confidence.shape != (self.base.n,):
            raise ValidationError("confidence length must match record count")
        if self.confidence.size and (self.confidence.min() < 0 or self.confidence.max() > 1):
            raise ValidationError("confidences must lie in [0, 1]")


def build_replicas(
    data: TimeSeriesDataset,
    cfg: TrainConfig,
    n_replicas: int = DEFAULT_REPLICAS,
    workers: int | None = None,
) -> ReplicaSet:
    """Train n seed replicas on a labeled dataset and calibrate s_max."""
    if n_replicas < 2:
        raise ValidationError("need at least 2 replicas")
    X, y = _labeled_arrays(data)
    split = _chrono_split(X.shape[0], cfg.validation_fraction)
    X_val = X[split:] if split < X.shape[0] else X

    def fit(i: int) -> DenseNetwork:
        net = default_regressor(X.shape[1], cfg.seed + i)
        trained, _ = train_arrays(net, X, y, cfg.with_seed(cfg.seed + i))
        return trained

    n_workers = workers if workers is not None else worker_count()
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            models = list(pool.map(fit, range(n_replicas)))
    else:
        models = [fit(i) for i in range(n_replicas)]

    stds = np.stack([m.predict(X_val) for m in models]).std(axis=0)
    s_max = float(np.quantile(stds, 0.95))
    return ReplicaSet(models=models, s_max=s_max, source_farm_id=data.farm_id)


def pseudo_label(replicas: ReplicaSet, target_nwp: TimeSeriesDataset) -> PseudoLabeledDataset:
    """Label an unlabeled series with the replica mean; confidence is
    1 - clamp(replica std / s_max, 0, 1)."""
    if target_nwp.has_power:
        raise ValidationError("target series must be unlabeled")
    preds = replicas.predict_stack(target_nwp.model_inputs())
    power = np.clip(preds.mean(axis=0), 0.0, 1.0)
    std = preds.std(axis=0)
    denom = max(replicas.s_max, 1e-12)
    confidence = 1.0 - np.clip(std / denom, 0.0, 1.0)
    return PseudoLabeledDataset(
        base=target_nwp.with_power(power),
        confidence=confidence,
        source_model_id=replicas.source_farm_id or "replicas",
    )


@dataclass
class SourceFarm:
    """One member of the historical farm pool."""

    config: FarmConfig
    data: TimeSeriesDataset
    replicas: ReplicaSet | None = None


def train_wp1_naive(ranking, sources: Mapping[str, SourceFarm], target_nwp, cfg: TrainConfig) -> DenseNetwork:
    """No-power-data path: pseudo-label the target NWP with the closest
    source farm's replicas, then train a fresh network with confidence
    weights."""
    if not ranking.entries:
        raise ValidationError("similarity ranking is empty")
    rank1 = ranking.entries[0].source_farm_id
    if rank1 not in sources:
        raise ValidationError(f"ranked source {rank1!r} missing from pool")
    source = sources[rank1]
    if source.replicas is None:
        raise ValidationError(f"source {rank1!r} has no trained replicas")

    labeled = pseudo_label(source.replicas, target_nwp)
    if labeled.confidence.sum() <= 0.0:
        raise ValidationError("no usable pseudo-labels (all confidences are zero)")
    X = labeled.base.model_inputs()
    net = default_regressor(X.shape[1], cfg.seed)
    trained, _ = train_arrays(net, X, labeled.base.power, cfg, sample_weight=labeled.confidence)
    return trained


# -- feature-representation transfer: universal model ------------------------


@dataclass
class UniversalModel:
    """Shared encoder plus one regressor trained on pooled source data."""

    encoder: DenseNetwork
    regressor: DenseNetwork
    x_mean: np.ndarray
    x_std: np.ndarray
    reconstruction_mse: float
    code_dim: int

    def predict(self, X: np.ndarray) -> np.ndarray:
        codes = encode(self.encoder, standardize(np.asarray(X, dtype=float), self.x_mean, self.x_std))
        if codes.ndim == 1:
            codes = codes[:, None]
        return np.clip(self.regressor.predict(codes), 0.0, 1.0)

    def predict_series(self, dataset: TimeSeriesDataset) -> np.ndarray:
        return self.predict(dataset.model_inputs())


def train_universal(
    sources: Sequence[TimeSeriesDataset],
    code_dim: int,
    cfg: TrainConfig,
) -> UniversalModel:
    """Autoencoder on pooled source features, regressor on pooled codes."""
    if len(sources) < 2:
        raise ValidationError("need at least 2 source datasets")
    X_all = np.vstack([ds.model_inputs() for ds in sources])
    mean, std = fit_scaler(X_all)
    X_std = standardize(X_all, mean, std)

    encoder, decoder = train_autoencoder(X_std, code_dim, cfg)
    recon = decoder.predict(encode(encoder, X_std))
    reconstruction_mse = float(np.mean((recon - X_std) ** 2))

    labeled = [_labeled_arrays(ds) for ds in sources]
    X_lab = np.vstack([x for x, _ in labeled])
    y_lab = np.concatenate([y for _, y in labeled])
    codes = encode(encoder, standardize(X_lab, mean, std))
    if codes.ndim == 1:
        codes = codes[:, None]
    regressor = default_regressor(code_dim, cfg.seed)
    regressor, _ = train_arrays(regressor, codes, y_lab, cfg)
    return UniversalModel(
        encoder=encoder,
        regressor=regressor,
        x_mean=mean,
        x_std=std,
        reconstruction_mse=reconstruction_mse,
        code_dim=code_dim,
    )


# -- self-training ------------------------------------------------------------


def self_train(
    base: DenseNetwork,
    labeled: TimeSeriesDataset,
    unlabeled: TimeSeriesDataset,
    conf_threshold: float = 0.9,
    max_rounds: int = 3,
    cfg: TrainConfig = TrainConfig(),
    n_replicas: int = DEFAULT_REPLICAS,
) -> DenseNetwork:
    """Iteratively admit confident pseudo-labels into the training pool.

    The labeled-only model is the guard baseline: every round's candidate is
    validated on a held-out labeled split and the best model seen so far is
    returned, so augmentation can never ship a worse model (negative-transfer
    guard). Rounds stop when nothing new qualifies, the round budget is
    spent, or validation worsens.
    """
    if not 0.0 < conf_threshold <= 1.0:
        raise ValidationError("conf_threshold must lie in (0, 1]")
    X_lab, y_lab = _labeled_arrays(labeled)
    split = _chrono_split(X_lab.shape[0], cfg.validation_fraction)
    X_val = X_lab[split:] if split < X_lab.shape[0] else X_lab
    y_val = y_lab[split:] if split < X_lab.shape[0] else y_lab

    pool_X, pool_y = X_lab[:split], y_lab[:split]
    pool_w = np.ones(len(pool_y))

    best, _ = train_arrays(base, pool_X, pool_y, cfg, sample_weight=pool_w)
    best_rmse = rmse(best.predict(X_val), y_val)

    if unlabeled.n == 0:
        return best
    remaining = unlabeled.without_power()
    for rnd in range(max_rounds):
        if remaining.n == 0:
            break
        models = [
            train_arrays(base, pool_X, pool_y, cfg.with_seed(cfg.seed + 101 * (rnd + 1) + i), sample_weight=pool_w)[0]
            for i in range(n_replicas)
        ]
        s_max = float(np.quantile(np.stack([m.predict(X_val) for m in models]).std(axis=0), 0.95))
        replicas = ReplicaSet(models=models, s_max=s_max, source_farm_id=labeled.farm_id)
        pl = pseudo_label(replicas, remaining)

        admit = pl.confidence >= conf_threshold
        if not admit.any():
            break
        X_new = pl.base.model_inputs()[admit]
        pool_X = np.vstack([pool_X, X_new])
        pool_y = np.concatenate([pool_y, pl.base.power[admit]])
        pool_w = np.concatenate([pool_w, pl.confidence[admit]])
        remaining = remaining.take(~admit)

        candidate, _ = train_arrays(base, pool_X, pool_y, cfg, sample_weight=pool_w)
        cand_rmse = rmse(candidate.predict(X_val), y_val)
        if cand_rmse > best_rmse:
            break
        best, best_rmse = candidate, cand_rmse
    return best


# -- multi-task learning (hard parameter sharing) -----------------------------


@dataclass
class MtlNetwork:
    """Shared trunk with per-farm output heads; the trunk carries the pooled
    input standardizer."""

    trunk: DenseNetwork
    heads: dict[str, DenseNetwork] = field(default_factory=dict)

    @property
    def input_dim(self) -> int:
        return self.trunk.input_dim

    @property
    def trunk_out_dim(self) -> int:
        return self.trunk.output_dim

    def copy(self) -> "MtlNetwork":
        return MtlNetwork(
            trunk=self.trunk.copy(),
            heads={fid: h.copy() for fid, h in self.heads.items()},
        )

    def predict(self, farm_id: str, X: np.ndarray) -> np.ndarray:
        if farm_id not in self.heads:
            raise ValidationError(f"no head for farm {farm_id!r}")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        a = self.trunk._standardized(X)
        for net in (self.trunk, self.heads[farm_id]):
            for W, b, act in zip(net.weights, net.biases, net.activations):
                a = _act(act, a @ W + b)
        return np.clip(a[:, 0], 0.0, 1.0)

    def predict_series(self, farm_id: str, dataset: TimeSeriesDataset) -> np.ndarray:
        return self.predict(farm_id, dataset.model_inputs())

    def head_predictor(self, farm_id: str) -> "MtlHeadPredictor":
        return MtlHeadPredictor(self, farm_id)


@dataclass
class MtlHeadPredictor:
    """Binds one task head so the pair can act as a standalone predictor."""

    mtl: MtlNetwork
    farm_id: str

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.mtl.predict(self.farm_id, X)

    def predict_series(self, dataset: TimeSeriesDataset) -> np.ndarray:
        return self.mtl.predict_series(self.farm_id, dataset)


class _StackState:
    """Snapshot/restore over several networks trained jointly in place."""

    def __init__(self, nets: Sequence[DenseNetwork]):
        self.nets = list(nets)

    def snapshot(self):
        return [([W.copy() for W in n.weights], [b.copy() for b in n.biases]) for n in self.nets]

    def restore(self, snap):
        for net, (Ws, bs) in zip(self.nets, snap):
            for W, sW in zip(net.weights, Ws):
                W[...] = sW
            for b, sb in zip(net.biases, bs):
                b[...] = sb


def _joint_step(nets, sgds, X_std, y, cfg, frozen_flags=None, sample_weight=None):
    """One SGD step through concatenated component layers; returns loss."""
    Ws = [W for n in nets for W in n.weights]
    bs = [b for n in nets for b in n.biases]
    acts = [a for n in nets for a in n.activations]
    As, Zs = _forward_cache(Ws, bs, acts, X_std)
    loss, d_out = _mse_loss_grad(As[-1], y, sample_weight)
    dWs, dbs, _ = _backward(Ws, acts, As, Zs, d_out)
    i = 0
    for net, sgd in zip(nets, sgds):
        L = net.n_layers
        if sgd is not None:
            frozen = net.freeze_mask if frozen_flags is None else frozen_flags[net]
            sgd.step(net.weights, net.biases, dWs[i : i + L], dbs[i : i + L], frozen)
        i += L
    return loss


def _joint_predict(nets, X_std):
    a = X_std
    for net in nets:
        for W, b, act in zip(net.weights, net.biases, net.activations):
            a = _act(act, a @ W + b)
    return a


def train_mtl(
    sources: Sequence[TimeSeriesDataset],
    cfg: TrainConfig,
    trunk_hidden: Sequence[int] = TRUNK_HIDDEN,
    head_hidden: Sequence[int] = HEAD_HIDDEN,
) -> MtlNetwork:
    """Joint training: one trunk, one head per farm, farm-level round-robin
    batches so no single farm dominates the shared layers."""
    if len(sources) < 2:
        raise ValidationError("need at least 2 source datasets")
    farm_ids = [ds.farm_id for ds in sources]
    if len(set(farm_ids)) != len(farm_ids):
        raise ValidationError("duplicate farm_ids in sources")

    data = {}
    for ds in sources:
        X, y = _labeled_arrays(ds)
        split = _chrono_split(X.shape[0], cfg.validation_fraction)
        data[ds.farm_id] = (X, y[:, None], split)
    n_in = next(iter(data.values()))[0].shape[1]

    mean, std = fit_scaler(np.vstack([X[:s] for X, _, s in data.values()]))
    trunk = init_network([n_in, *trunk_hidden], ["tanh"] * len(trunk_hidden), cfg.seed)
    trunk.x_mean, trunk.x_std = mean, std
    trunk_out = trunk.output_dim
    head_dims = [trunk_out, *head_hidden, 1]
    head_acts = ["tanh"] * len(head_hidden) + ["identity"]
    heads = {fid: init_network(head_dims, head_acts, cfg.seed + 1 + i) for i, fid in enumerate(farm_ids)}

    rng = np.random.default_rng(cfg.seed)
    sgd_trunk = _Sgd(trunk.weights, trunk.biases, cfg)
    sgd_heads = {fid: _Sgd(heads[fid].weights, heads[fid].biases, cfg) for fid in farm_ids}

    state = _StackState([trunk] + [heads[fid] for fid in farm_ids])
    best_loss, best_snap, stale = np.inf, state.snapshot(), 0
    orders = {fid: iter(()) for fid in farm_ids}

    def next_batch(fid):
        X, y, split = data[fid]
        try:
            idx = next(orders[fid])
        except StopIteration:
            perm = rng.permutation(split)
            batches = [perm[lo : lo + cfg.batch_size] for lo in range(0, split, cfg.batch_size)]
            orders[fid] = iter(batches)
            idx = next(orders[fid])
        return X[idx], y[idx]

    steps = max(int(np.ceil(s / cfg.batch_size)) for _, _, s in data.values())
    for epoch in range(cfg.epochs):
        _apply_lr_schedule(epoch, cfg, [sgd_trunk, *sgd_heads.values()])
        for _ in range(steps):
            for fid in farm_ids:
                Xb, yb = next_batch(fid)
                loss = _joint_step(
                    [trunk, heads[fid]], [sgd_trunk, sgd_heads[fid]], standardize(Xb, mean, std), yb, cfg
                )
                if not np.isfinite(loss):
                    raise TrainingError(f"loss diverged during multi-task epoch {epoch}")
        val_losses = []
        for fid in farm_ids:
            X, y, split = data[fid]
            if split < X.shape[0]:
                pred = _joint_predict([trunk, heads[fid]], standardize(X[split:], mean, std))
                val_losses.append(float(np.mean((pred - y[split:]) ** 2)))
        watch = float(np.mean(val_losses)) if val_losses else np.inf
        if watch < best_loss - 1e-15:
            best_loss, best_snap, stale = watch, state.snapshot(), 0
        else:
            stale += 1
            if stale > cfg.early_stop_patience:
                break
    state.restore(best_snap)
    return MtlNetwork(trunk=trunk, heads=heads)


def add_task_head(
    mtl: MtlNetwork,
    new_farm_id: str,
    little_data: TimeSeriesDataset,
    cfg: TrainConfig,
    freeze_trunk: bool = True,
) -> MtlNetwork:
    """Attach and train a head for a new farm; existing heads are never
    touched and the trunk stays bitwise intact when frozen."""
    if new_farm_id in mtl.heads:
        raise ValidationError(f"farm {new_farm_id!r} already has a head")
    X, y = _labeled_arrays(little_data)
    out = mtl.copy()

    template = next(iter(out.heads.values()), None)
    if template is not None:
        head_dims = [out.trunk_out_dim] + [W.shape[1] for W in template.weights]
        head_acts = list(template.activations)
    else:
        head_dims = [out.trunk_out_dim, *HEAD_HIDDEN, 1]
        head_acts = ["tanh"] * len(HEAD_HIDDEN) + ["identity"]
    head = init_network(head_dims, head_acts, cfg.seed)

    split = _chrono_split(X.shape[0], cfg.validation_fraction)
    X_std = standardize(X, out.trunk.x_mean, out.trunk.x_std)
    frozen = {out.trunk: [freeze_trunk] * out.trunk.n_layers, head: [False] * head.n_layers}
    sgd_trunk = None if freeze_trunk else _Sgd(out.trunk.weights, out.trunk.biases, cfg)
    sgd_head = _Sgd(head.weights, head.biases, cfg)

    rng = np.random.default_rng(cfg.seed)
    state = _StackState([out.trunk, head])
    best_loss, best_snap, stale = np.inf, state.snapshot(), 0
    y2 = y[:, None]
    for epoch in range(cfg.epochs):
        _apply_lr_schedule(epoch, cfg, [sgd_trunk, sgd_head])
        order = rng.permutation(split)
        for lo in range(0, split, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            loss = _joint_step([out.trunk, head], [sgd_trunk, sgd_head], X_std[idx], y2[idx], cfg, frozen)
            if not np.isfinite(loss):
                raise TrainingError(f"loss diverged while training head {new_farm_id!r}")
        if split < X.shape[0]:
            pred = _joint_predict([out.trunk, head], X_std[split:])
            watch = float(np.mean((pred - y2[split:]) ** 2))
        else:
            pred = _joint_predict([out.trunk, head], X_std[:split])
            watch = float(np.mean((pred - y2[:split]) ** 2))
        if watch < best_loss - 1e-15:
            best_loss, best_snap, stale = watch, state.snapshot(), 0
        else:
            stale += 1
            if stale > cfg.early_stop_patience:
                break
    state.restore(best_snap)
    out.heads[new_farm_id] = head
    return out


def finetune_task_head(
    mtl: MtlNetwork,
    farm_id: str,
    X: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig,
    freeze_trunk: bool = True,
) -> MtlNetwork:
    """Continue training one existing head on raw (X, y) arrays; the trunk is
    frozen by default and other heads are never touched."""
    if farm_id not in mtl.heads:
        raise ValidationError(f"no head for farm {farm_id!r}")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)[:, None] if np.ndim(y) == 1 else np.asarray(y, dtype=float)
    out = mtl.copy()
    head = out.heads[farm_id]
    frozen = {out.trunk: [freeze_trunk] * out.trunk.n_layers, head: [False] * head.n_layers}
    sgd_trunk = None if freeze_trunk else _Sgd(out.trunk.weights, out.trunk.biases, cfg)
    sgd_head = _Sgd(head.weights, head.biases, cfg)
    X_std = standardize(X, out.trunk.x_mean, out.trunk.x_std)
    split = _chrono_split(X.shape[0], cfg.validation_fraction)

    rng = np.random.default_rng(cfg.seed)
    state = _StackState([out.trunk, head])
    best_loss, best_snap, stale = np.inf, state.snapshot(), 0
    for epoch in range(cfg.epochs):
        _apply_lr_schedule(epoch, cfg, [sgd_trunk, sgd_head])
        order = rng.permutation(split)
        for lo in range(0, split, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            loss = _joint_step([out.trunk, head], [sgd_trunk, sgd_head], X_std[idx], y[idx], cfg, frozen)
            if not np.isfinite(loss):
                raise TrainingError(f"loss diverged while finetuning head {farm_id!r}")
        eval_slice = slice(split, None) if split < X.shape[0] else slice(None, split)
        pred = _joint_predict([out.trunk, head], X_std[eval_slice])
        watch = float(np.mean((pred - y[eval_slice]) ** 2))
        if watch < best_loss - 1e-15:
            best_loss, best_snap, stale = watch, state.snapshot(), 0
        else:
            stale += 1
            if stale > cfg.early_stop_patience:
                break
    state.restore(best_snap)
    return out


# -- multi-cross learning ------------------------------------------------------


@dataclass
class MultiCrossNetwork:
    """Per-NWP adapters into a shared abstraction, a shared trunk, a spatial
    combination layer, and per-farm heads. Each adapter carries the
    standardizer of its own weather model."""

    adapters: dict[str, DenseNetwork]
    trunk: DenseNetwork
    spatial: DenseNetwork
    heads: dict[str, DenseNetwork]

    def __post_init__(self):
        if not self.adapters or not self.heads:
            raise ValidationError("need at least one adapter and one head")
        out_dims = {a.output_dim for a in self.adapters.values()}
        if len(out_dims) != 1:
            raise ValidationError("all adapters must share their output dimension")

    def copy(self) -> "MultiCrossNetwork":
        return MultiCrossNetwork(
            adapters={mid: a.copy() for mid, a in self.adapters.items()},
            trunk=self.trunk.copy(),
            spatial=self.spatial.copy(),
            heads={fid: h.copy() for fid, h in self.heads.items()},
        )

    def _stack(self, nwp_model_id: str, farm_id: str) -> list[DenseNetwork]:
        if nwp_model_id not in self.adapters:
            raise ValidationError(f"no adapter for weather model {nwp_model_id!r}")
        if farm_id not in self.heads:
            raise ValidationError(f"no head for farm {farm_id!r}")
        return [self.adapters[nwp_model_id], self.trunk, self.spatial, self.heads[farm_id]]

    def predict(self, nwp_model_id: str, farm_id: str, X: np.ndarray) -> np.ndarray:
        stack = self._stack(nwp_model_id, farm_id)
        X = np.atleast_2d(np.asarray(X, dtype=float))
        a = stack[0]._standardized(X)
        return np.clip(_joint_predict(stack, a)[:, 0], 0.0, 1.0)

    def predict_series(self, nwp_model_id: str, farm_id: str, dataset: TimeSeriesDataset) -> np.ndarray:
        return self.predict(nwp_model_id, farm_id, dataset.model_inputs())

    def abstraction(self, nwp_model_id: str, X: np.ndarray) -> np.ndarray:
        """Shared representation after adapter and trunk (consistency space)."""
        adapter = self.adapters[nwp_model_id]
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return _joint_predict([adapter, self.trunk], adapter._standardized(X))


def _aligned_pairs(data: Mapping[tuple[str, str], TimeSeriesDataset], splits) -> list[tuple]:
    """Timestamp-aligned training-row index pairs for every (m1, m2, farm)."""
    pairs = []
    keys = sorted(data.keys())
    farms = sorted({f for _, f in keys})
    models = sorted({m for m, _ in keys})
    for f in farms:
        present = [m for m in models if (m, f) in data]
        for i, m1 in enumerate(present):
            for m2 in present[i + 1 :]:
                ds1, ds2 = data[(m1, f)], data[(m2, f)]
                n1 = splits[(m1, f)]
                n2 = splits[(m2, f)]
                _, i1, i2 = np.intersect1d(
                    ds1.timestamps[:n1], ds2.timestamps[:n2], return_indices=True
                )
                if i1.size:
                    pairs.append((m1, m2, f, i1, i2))
    return pairs


def consistency_gap(net: MultiCrossNetwork, data: Mapping[tuple[str, str], TimeSeriesDataset]) -> float:
    """Mean squared distance between abstractions of timestamp-aligned
    records seen through different weather models."""
    keys = sorted(data.keys())
    farms = sorted({f for _, f in keys})
    models = sorted({m for m, _ in keys})
    gaps = []
    for f in farms:
        present = [m for m in models if (m, f) in data and m in net.adapters]
        for i, m1 in enumerate(present):
            for m2 in present[i + 1 :]:
                ds1, ds2 = data[(m1, f)], data[(m2, f)]
                _, i1, i2 = np.intersect1d(ds1.timestamps, ds2.timestamps, return_indices=True)
                if not i1.size:
                    continue
                h1 = net.abstraction(m1, ds1.model_inputs()[i1])
                h2 = net.abstraction(m2, ds2.model_inputs()[i2])
                gaps.append(float(np.mean((h1 - h2) ** 2)))
    if not gaps:
        raise ValidationError("no timestamp-aligned pairs between weather models")
    return float(np.mean(gaps))


def train_multicross(
    data: Mapping[tuple[str, str], TimeSeriesDataset],
    cfg: TrainConfig,
    lambda_consistency: float = 0.1,
    abstraction_dim: int = ABSTRACTION_DIM,
) -> MultiCrossNetwork:
    """Joint training over (weather model, farm) pairs with an abstraction
    consistency penalty tying the adapters together."""
    if lambda_consistency < 0:
        raise ValidationError("lambda_consistency must be >= 0")
    keys = sorted(data.keys())
    if not keys:
        raise ValidationError("no training data")
    models = sorted({m for m, _ in keys})
    farms = sorted({f for _, f in keys})
    for f in farms:
        if not any((m, f) in data for m in models):
            raise ValidationError(f"farm {f!r} has no weather-model data")
    if len(models) < 2:
        warnings.warn("single weather model: consistency term skipped", stacklevel=2)

    arrays, splits = {}, {}
    for key in keys:
        X, y = _labeled_arrays(data[key])
        arrays[key] = (X, y[:, None])
        splits[key] = _chrono_split(X.shape[0], cfg.validation_fraction)
    n_in = next(iter(arrays.values()))[0].shape[1]

    adapters = {}
    for i, m in enumerate(models):
        adapter = init_network([n_in, *ADAPTER_HIDDEN, abstraction_dim], ["tanh"] * (len(ADAPTER_HIDDEN) + 1), cfg.seed + 10 + i)
        X_model = np.vstack([arrays[(m2, f)][0][: splits[(m2, f)]] for (m2, f) in keys if m2 == m])
        adapter.x_mean, adapter.x_std = fit_scaler(X_model)
        adapters[m] = adapter
    trunk = init_network([abstraction_dim, *TRUNK_HIDDEN], ["tanh"] * len(TRUNK_HIDDEN), cfg.seed)
    spatial = init_network([trunk.output_dim, *SPATIAL_HIDDEN], ["tanh"] * len(SPATIAL_HIDDEN), cfg.seed + 1)
    heads = {
        f: init_network([spatial.output_dim, *HEAD_HIDDEN, 1], ["tanh"] * len(HEAD_HIDDEN) + ["identity"], cfg.seed + 100 + i)
        for i, f in enumerate(farms)
    }

    net = MultiCrossNetwork(adapters=adapters, trunk=trunk, spatial=spatial, heads=heads)
    pairs = _aligned_pairs(data, splits) if len(models) >= 2 and lambda_consistency > 0 else []

    rng = np.random.default_rng(cfg.seed)
    sgds = {id(c): _Sgd(c.weights, c.biases, cfg) for c in [trunk, spatial, *adapters.values(), *heads.values()]}
    components = [trunk, spatial] + [adapters[m] for m in models] + [heads[f] for f in farms]
    state = _StackState(components)
    best_loss, best_snap, stale = np.inf, state.snapshot(), 0

    orders = {key: iter(()) for key in keys}

    def next_batch(key):
        X, y = arrays[key]
        split = splits[key]
        try:
            idx = next(orders[key])
        except StopIteration:
            perm = rng.permutation(split)
            orders[key] = iter([perm[lo : lo + cfg.batch_size] for lo in range(0, split, cfg.batch_size)])
            idx = next(orders[key])
        return X[idx], y[idx]

    steps = max(int(np.ceil(splits[k] / cfg.batch_size)) for k in keys)
    for epoch in range(cfg.epochs):
        _apply_lr_schedule(epoch, cfg, sgds.values())
        for _ in range(steps):
            for m, f in keys:
                Xb, yb = next_batch((m, f))
                stack = net._stack(m, f)
                loss = _joint_step(
                    stack,
                    [sgds[id(c)] for c in stack],
                    stack[0]._standardized(Xb),
                    yb,
                    cfg,
                )
                if not np.isfinite(loss):
                    raise TrainingError(f"loss diverged during multi-cross epoch {epoch}")
            for m1, m2, f, i1, i2 in pairs:
                take = rng.choice(i1.size, size=min(cfg.batch_size, i1.size), replace=False)
                _consistency_step(net, m1, m2, arrays[(m1, f)][0][i1[take]], arrays[(m2, f)][0][i2[take]], sgds, cfg, lambda_consistency)
        val_losses = []
        for key in keys:
            X, y = arrays[key]
            split = splits[key]
            if split < X.shape[0]:
                stack = net._stack(*key)
                pred = _joint_predict(stack, stack[0]._standardized(X[split:]))
                val_losses.append(float(np.mean((pred - y[split:]) ** 2)))
        watch = float(np.mean(val_losses)) if val_losses else np.inf
        if watch < best_loss - 1e-15:
            best_loss, best_snap, stale = watch, state.snapshot(), 0
        else:
            stale += 1
            if stale > cfg.early_stop_patience:
                break
    state.restore(best_snap)
    return net


def _consistency_step(net, m1, m2, X1, X2, sgds, cfg, lam, update_trunk=True, update_m2=True):
    """SGD step on lambda * mean((h1 - h2)^2) over the shared abstraction."""
    a1, a2 = net.adapters[m1], net.adapters[m2]
    stack1, stack2 = [a1, net.trunk], [a2, net.trunk]

    def fwd(stack, X_std):
        Ws = [W for n in stack for W in n.weights]
        bs = [b for n in stack for b in n.biases]
        acts = [a for n in stack for a in n.activations]
        return Ws, acts, _forward_cache(Ws, bs, acts, X_std)

    Ws1, acts1, (As1, Zs1) = fwd(stack1, a1._standardized(X1))
    Ws2, acts2, (As2, Zs2) = fwd(stack2, a2._standardized(X2))
    h1, h2 = As1[-1], As2[-1]
    d = 2.0 * lam * (h1 - h2) / h1.size

    dWs1, dbs1, _ = _backward(Ws1, acts1, As1, Zs1, d)
    dWs2, dbs2, _ = _backward(Ws2, acts2, As2, Zs2, -d)

    L_a1, L_a2 = a1.n_layers, a2.n_layers
    sgds[id(a1)].step(a1.weights, a1.biases, dWs1[:L_a1], dbs1[:L_a1], a1.freeze_mask)
    if update_m2:
        sgds[id(a2)].step(a2.weights, a2.biases, dWs2[:L_a2], dbs2[:L_a2], a2.freeze_mask)
    if update_trunk:
        gW = [g1 + g2 for g1, g2 in zip(dWs1[L_a1:], dWs2[L_a2:])]
        gb = [g1 + g2 for g1, g2 in zip(dbs1[L_a1:], dbs2[L_a2:])]
        sgds[id(net.trunk)].step(net.trunk.weights, net.trunk.biases, gW, gb, net.trunk.freeze_mask)


def adapt_new_nwp(
    net: MultiCrossNetwork,
    new_nwp_data: Mapping[str, TimeSeriesDataset],
    cfg: TrainConfig,
    reference_data: Mapping[tuple[str, str], TimeSeriesDataset] | None = None,
) -> MultiCrossNetwork:
    """Integrate a new weather model by training only its adapter; trunk,
    spatial layer and heads stay bitwise frozen.

    When ``reference_data`` (existing-model series) is supplied, the adapter
    is additionally pulled toward the existing abstraction on aligned
    timestamps.
    """
    if not new_nwp_data:
        raise ValidationError("no data for the new weather model")
    new_ids = {ds.nwp_model_id for ds in new_nwp_data.values()}
    if len(new_ids) != 1:
        raise ValidationError("all datasets must come from one weather model")
    new_id = new_ids.pop()
    if new_id in net.adapters:
        raise ValidationError(f"adapter for {new_id!r} already exists")
    for fid in new_nwp_data:
        if fid not in net.heads:
            raise ValidationError(f"no head for farm {fid!r}")

    out = net.copy()
    farms = sorted(new_nwp_data.keys())
    arrays, splits = {}, {}
    for fid in farms:
        X, y = _labeled_arrays(new_nwp_data[fid])
        arrays[fid] = (X, y[:, None])
        splits[fid] = _chrono_split(X.shape[0], cfg.validation_fraction)
    n_in = next(iter(arrays.values()))[0].shape[1]

    template = next(iter(out.adapters.values()))
    adapter = init_network(
        [n_in] + [W.shape[1] for W in template.weights], list(template.activations), cfg.seed + 7
    )
    adapter.x_mean, adapter.x_std = fit_scaler(np.vstack([arrays[f][0][: splits[f]] for f in farms]))
    out.adapters[new_id] = adapter

    frozen_rest = {
        out.trunk: [True] * out.trunk.n_layers,
        out.spatial: [True] * out.spatial.n_layers,
        **{h: [True] * h.n_layers for h in out.heads.values()},
        adapter: [False] * adapter.n_layers,
    }
    sgds = {id(adapter): _Sgd(adapter.weights, adapter.biases, cfg)}

    align = []
    if reference_data:
        for (m_ref, fid), ds_ref in sorted(reference_data.items()):
            if m_ref not in out.adapters or m_ref == new_id or fid not in new_nwp_data:
                continue
            ds_new = new_nwp_data[fid]
            _, i_new, i_ref = np.intersect1d(
                ds_new.timestamps[: splits[fid]], ds_ref.timestamps, return_indices=True
            )
            if i_new.size:
                align.append((m_ref, fid, ds_new.model_inputs()[i_new], ds_ref.model_inputs()[i_ref]))

    rng = np.random.default_rng(cfg.seed)
    state = _StackState([adapter])
    best_loss, best_snap, stale = np.inf, state.snapshot(), 0
    steps = max(int(np.ceil(splits[f] / cfg.batch_size)) for f in farms)
    orders = {f: iter(()) for f in farms}

    def next_batch(fid):
        X, y = arrays[fid]
        split = splits[fid]
        try:
            idx = next(orders[fid])
        except StopIteration:
            perm = rng.permutation(split)
            orders[fid] = iter([perm[lo : lo + cfg.batch_size] for lo in range(0, split, cfg.batch_size)])
            idx = next(orders[fid])
        return X[idx], y[idx]

    for epoch in range(cfg.epochs):
        _apply_lr_schedule(epoch, cfg, sgds.values())
        for _ in range(steps):
            for fid in farms:
                Xb, yb = next_batch(fid)
                stack = out._stack(new_id, fid)
                sgd_list = [sgds.get(id(c)) for c in stack]
                loss = _joint_step(stack, sgd_list, adapter._standardized(Xb), yb, cfg, frozen_rest)
                if not np.isfinite(loss):
                    raise TrainingError("loss diverged while adapting new weather model")
            for m_ref, fid, X_new, X_ref in align:
                take = rng.choice(X_new.shape[0], size=min(cfg.batch_size, X_new.shape[0]), replace=False)
                h_ref = out.abstraction(m_ref, X_ref[take])
                _pull_adapter_toward(out, new_id, X_new[take], h_ref, sgds[id(adapter)], cfg)
        val_losses = []
        for fid in farms:
            X, y = arrays[fid]
            split = splits[fid]
            if split < X.shape[0]:
                pred = out.predict(new_id, fid, X[split:])
                val_losses.append(float(np.mean((pred - y[split:, 0]) ** 2)))
        watch = float(np.mean(val_losses)) if val_losses else np.inf
        if watch < best_loss - 1e-15:
            best_loss, best_snap, stale = watch, state.snapshot(), 0
        else:
            stale += 1
            if stale > cfg.early_stop_patience:
                break
    state.restore(best_snap)
    return out


def _pull_adapter_toward(net, model_id, X_new, h_target, sgd, cfg, lam=0.1):
    """Gradient step moving the adapter's abstraction toward a fixed target."""
    adapter = net.adapters[model_id]
    stack = [adapter, net.trunk]
    Ws = [W for n in stack for W in n.weights]
    bs = [b for n in stack for b in n.biases]
    acts = [a for n in stack for a in n.activations]
    As, Zs = _forward_cache(Ws, bs, acts, adapter._standardized(X_new))
    d = 2.0 * lam * (As[-1] - h_target) / As[-1].size
    dWs, dbs, _ = _backward(Ws, acts, As, Zs, d)
    L = adapter.n_layers
    sgd.step(adapter.weights, adapter.biases, dWs[:L], dbs[:L], adapter.freeze_mask)


def add_multicross_head(
    net: MultiCrossNetwork,
    farm_id: str,
    data: TimeSeriesDataset,
    nwp_model_id: str,
    cfg: TrainConfig,
) -> MultiCrossNetwork:
    """Attach a head for a new farm, trained through an existing adapter;
    adapter, trunk and spatial layer stay frozen."""
    if farm_id in net.heads:
        raise ValidationError(f"farm {farm_id!r} already has a head")
    if nwp_model_id not in net.adapters:
        raise ValidationError(f"no adapter for weather model {nwp_model_id!r}")
    X, y = _labeled_arrays(data)
    out = net.copy()
    template = next(iter(out.heads.values()))
    head = init_network(
        [out.spatial.output_dim] + [W.shape[1] for W in template.weights],
        list(template.activations),
        cfg.seed + 3,
    )
    out.heads[farm_id] = head
    adapter = out.adapters[nwp_model_id]
    stack = [adapter, out.trunk, out.spatial, head]
    frozen = {c: [True] * c.n_layers for c in stack[:-1]}
    frozen[head] = [False] * head.n_layers
    sgds = [None, None, None, _Sgd(head.weights, head.biases, cfg)]

    X_std = adapter._standardized(X)
    y2 = y[:, None]
    split = _chrono_split(X.shape[0], cfg.validation_fraction)
    rng = np.random.default_rng(cfg.seed)
    state = _StackState([head])
    best_loss, best_snap, stale = np.inf, state.snapshot(), 0
    for epoch in range(cfg.epochs):
        _apply_lr_schedule(epoch, cfg, sgds)
        order = rng.permutation(split)
        for lo in range(0, split, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            loss = _joint_step(stack, sgds, X_std[idx], y2[idx], cfg, frozen)
            if not np.isfinite(loss):
                raise TrainingError(f"loss diverged while training head {farm_id!r}")
        eval_slice = slice(split, None) if split < X.shape[0] else slice(None, split)
        pred = _joint_predict(stack, X_std[eval_slice])
        watch = float(np.mean((pred - y2[eval_slice]) ** 2))
        if watch < best_loss - 1e-15:
            best_loss, best_snap, stale = watch, state.snapshot(), 0
        else:
            stale += 1
            if stale > cfg.early_stop_patience:
                break
    state.restore(best_snap)
    return out
