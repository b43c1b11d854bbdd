"""Minimal dense feed-forward engine: backprop, freezing, gradient checks.

Pure numpy, deterministic per seed. Networks are plain dataclasses; training
operates on private copies and returns new immutable values. The private
stack helpers (_forward_cache/_backward/_Sgd) are reused by the multi-task
and multi-cross trainers, which interleave updates across shared and
task-specific layers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .types import TimeSeriesDataset, TrainingError, ValidationError

ACTIVATIONS = ("tanh", "relu", "identity", "sigmoid")


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    if name == "identity":
        return z
    raise ValidationError(f"unknown activation {name!r}")


def _act_deriv(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    # a is the already-computed activation output for z
    if name == "tanh":
        return 1.0 - a * a
    if name == "relu":
        return (z > 0).astype(float)
    if name == "sigmoid":
        return a * (1.0 - a)
    if name == "identity":
        return np.ones_like(z)
    raise ValidationError(f"unknown activation {name!r}")


@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 32
    learning_rate: float = 0.05
    l2: float = 1e-6
    seed: int = 0
    early_stop_patience: int = 10
    validation_fraction: float = 0.2
    momentum: float = 0.9
    #: fractions of the epoch budget at which the learning rate halves
    lr_halving: tuple[float, ...] = (0.6, 0.85)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValidationError("validation_fraction must lie in [0, 1)")
        if self.epochs < 0 or self.l2 < 0:
            raise ValidationError("epochs and l2 must be >= 0")

    def with_seed(self, seed: int) -> "TrainConfig":
        from dataclasses import replace

        return replace(self, seed=seed)


@dataclass(eq=False)
class DenseNetwork:
    """Stack of affine layers with elementwise activations.

    weights[l] has shape (fan_in, fan_out); forward is a -> act(a @ W + b).
    When a standardizer (x_mean/x_std) is present, inputs pass through it
    before the first layer; it is fitted on the training split and serialized
    with the model.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]
    freeze_mask: list[bool]
    rng_seed: int = 0
    x_mean: np.ndarray | None = None
    x_std: np.ndarray | None = None

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations) == len(self.freeze_mask)):
            raise ValidationError("layer lists must have equal length")
        for l in range(len(self.weights) - 1):
            if self.weights[l].shape[1] != self.weights[l + 1].shape[0]:
                raise ValidationError(f"layer {l} output dim does not chain into layer {l + 1}")
        for W, b in zip(self.weights, self.biases):
            if b.shape != (W.shape[1],):
                raise ValidationError("bias shape must match layer output dim")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ValidationError("weights must be finite")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    def copy(self) -> "DenseNetwork":
        return DenseNetwork(
            weights=[W.copy() for W in self.weights],
            biases=[b.copy() for b in self.biases],
            activations=list(self.activations),
            freeze_mask=list(self.freeze_mask),
            rng_seed=self.rng_seed,
            x_mean=None if self.x_mean is None else self.x_mean.copy(),
            x_std=None if self.x_std is None else self.x_std.copy(),
        )

    def _standardized(self, X: np.ndarray) -> np.ndarray:
        if self.x_mean is None:
            return X
        return (X - self.x_mean) / self.x_std

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Batch prediction on raw inputs; (n,) when the head is scalar."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.input_dim:
            raise ValidationError(f"expected {self.input_dim} inputs, got {X.shape[1]}")
        a = self._standardized(X)
        for W, b, act in zip(self.weights, self.biases, self.activations):
            a = _act(act, a @ W + b)
        return a[:, 0] if self.output_dim == 1 else a

    def predict_series(self, dataset: TimeSeriesDataset) -> np.ndarray:
        """Power prediction over a dataset; outputs are clipped to [0, 1]."""
        return np.clip(self.predict(resolve_inputs(self, dataset)), 0.0, 1.0)

    def to_json_dict(self) -> dict:
        return {
            "format": "windtl-dense-1",
            "layer_dims": [self.input_dim] + [W.shape[1] for W in self.weights],
            "activations": list(self.activations),
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "freeze_mask": list(self.freeze_mask),
            "rng_seed": self.rng_seed,
            "x_mean": None if self.x_mean is None else self.x_mean.tolist(),
            "x_std": None if self.x_std is None else self.x_std.tolist(),
        }

    @staticmethod
    def from_json_dict(d: dict) -> "DenseNetwork":
        if d.get("format") != "windtl-dense-1":
            raise ValidationError("not a serialized dense network")
        return DenseNetwork(
            weights=[np.array(W, dtype=float) for W in d["weights"]],
            biases=[np.array(b, dtype=float) for b in d["biases"]],
            activations=list(d["activations"]),
            freeze_mask=[bool(f) for f in d["freeze_mask"]],
            rng_seed=int(d["rng_seed"]),
            x_mean=None if d["x_mean"] is None else np.array(d["x_mean"], dtype=float),
            x_std=None if d["x_std"] is None else np.array(d["x_std"], dtype=float),
        )


def resolve_inputs(net: DenseNetwork, dataset: TimeSeriesDataset) -> np.ndarray:
    """Pick the input matrix a network expects from a dataset.

    Networks sized to the raw feature count get the feature matrix; networks
    sized to features + 2 get the hour-of-day-augmented model inputs.
    """
    d = len(dataset.feature_names)
    if net.input_dim == d:
        return dataset.features
    if net.input_dim == d + 2:
        return dataset.model_inputs()
    raise ValidationError(
        f"network expects {net.input_dim} inputs; dataset provides {d} features (+2 clock)"
    )


def init_network(layer_dims: Sequence[int], activations: Sequence[str], seed: int) -> DenseNetwork:
    """Scaled-uniform fan-in initialization, deterministic per seed."""
    layer_dims = [int(d) for d in layer_dims]
    if len(layer_dims) < 2 or any(d < 1 for d in layer_dims):
        raise ValidationError("layer_dims needs >= 2 positive entries")
    if len(activations) != len(layer_dims) - 1:
        raise ValidationError("need one activation per layer")
    for a in activations:
        if a not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {a!r}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return DenseNetwork(
        weights=weights,
        biases=biases,
        activations=list(activations),
        freeze_mask=[False] * len(weights),
        rng_seed=int(seed),
    )


def forward(net: DenseNetwork, x: np.ndarray) -> np.ndarray:
    """Single-vector forward pass; returns the (output_dim,) output vector."""
    x = np.asarray(x, dtype=float)
    if x.shape != (net.input_dim,):
        raise ValidationError(f"expected input of shape ({net.input_dim},), got {x.shape}")
    a = net._standardized(x[None, :])
    for W, b, act in zip(net.weights, net.biases, net.activations):
        a = _act(act, a @ W + b)
    return a[0]


# -- internal stack machinery (shared with the multi-task trainers) ---------


def _forward_cache(weights, biases, acts, X):
    """Returns (As, Zs): As[0] = X, As[l+1] = act(Zs[l])."""
    As, Zs = [X], []
    a = X
    for W, b, act in zip(weights, biases, acts):
        z = a @ W + b
        a = _act(act, z)
        Zs.append(z)
        As.append(a)
    return As, Zs


def _backward(weights, acts, As, Zs, d_out):
    """Backprop from dL/d(output activation); returns (dWs, dbs, dX)."""
    L = len(weights)
    dWs = [None] * L
    dbs = [None] * L
    delta = d_out
    for l in range(L - 1, -1, -1):
        dz = delta * _act_deriv(acts[l], Zs[l], As[l + 1])
        dWs[l] = As[l].T @ dz
        dbs[l] = dz.sum(axis=0)
        delta = dz @ weights[l].T
    return dWs, dbs, delta


def _mse_loss_grad(pred, y, w=None):
    """Weighted MSE and dL/dpred; mean over samples and output dims."""
    err = pred - y
    k = y.shape[1]
    if w is None:
        loss = float(np.mean(err**2))
        grad = 2.0 * err / (err.shape[0] * k)
    else:
        wsum = float(w.sum())
        loss = float(np.sum(w[:, None] * err**2) / (wsum * k))
        grad = 2.0 * w[:, None] * err / (wsum * k)
    return loss, grad


def _apply_lr_schedule(epoch: int, cfg: "TrainConfig", sgds) -> None:
    """Halve the learning rate of every optimizer at the scheduled epochs."""
    if epoch in {int(f * cfg.epochs) for f in cfg.lr_halving}:
        for sgd in sgds:
            if sgd is not None:
                sgd.lr *= 0.5


class _Sgd:
    """Momentum SGD with L2 on weights; respects per-layer freezing."""

    def __init__(self, weights, biases, cfg: TrainConfig):
        self.vW = [np.zeros_like(W) for W in weights]
        self.vb = [np.zeros_like(b) for b in biases]
        self.lr = cfg.learning_rate
        self.mom = cfg.momentum
        self.l2 = cfg.l2

    def step(self, weights, biases, dWs, dbs, frozen):
        for l in range(len(weights)):
            if frozen[l]:
                continue
            self.vW[l] = self.mom * self.vW[l] - self.lr * (dWs[l] + self.l2 * weights[l])
            weights[l] += self.vW[l]
            self.vb[l] = self.mom * self.vb[l] - self.lr * dbs[l]
            biases[l] += self.vb[l]


def _stack_eval(weights, biases, acts, X, y):
    As, _ = _forward_cache(weights, biases, acts, X)
    return float(np.mean((As[-1] - y) ** 2))


def _fit_stack(weights, biases, acts, frozen, X, y, cfg, sample_weight, X_val, y_val):
    """Train a layer stack in place; restores the best snapshot seen.

    Early stopping watches validation loss when a validation split exists,
    else the epoch-end training loss. Returns {"train": [...], "val": [...]}.
    """
    rng = np.random.default_rng(cfg.seed)
    sgd = _Sgd(weights, biases, cfg)
    n = X.shape[0]
    history = {"train": [], "val": []}

    def snapshot():
        return [W.copy() for W in weights], [b.copy() for b in biases]

    def restore(snap):
        for W, sW in zip(weights, snap[0]):
            W[...] = sW
        for b, sb in zip(biases, snap[1]):
            b[...] = sb

    best_loss = np.inf
    best_snap = snapshot()
    stale = 0
    halvings = {int(f * cfg.epochs) for f in cfg.lr_halving}
    for epoch in range(cfg.epochs):
        if epoch in halvings:
            sgd.lr *= 0.5
        order = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            As, Zs = _forward_cache(weights, biases, acts, X[idx])
            wb = None if sample_weight is None else sample_weight[idx]
            _, d_out = _mse_loss_grad(As[-1], y[idx], wb)
            dWs, dbs, _ = _backward(weights, acts, As, Zs, d_out)
            sgd.step(weights, biases, dWs, dbs, frozen)

        As, _ = _forward_cache(weights, biases, acts, X)
        train_loss, _ = _mse_loss_grad(As[-1], y, sample_weight)
        if not np.isfinite(train_loss):
            raise TrainingError(f"loss diverged to {train_loss} at epoch {epoch}")
        history["train"].append(train_loss)
        if X_val is not None:
            val_loss = _stack_eval(weights, biases, acts, X_val, y_val)
            history["val"].append(val_loss)
            watch = val_loss
        else:
            watch = train_loss

        if watch < best_loss - 1e-15:
            best_loss = watch
            best_snap = snapshot()
            stale = 0
        else:
            stale += 1
            if stale > cfg.early_stop_patience:
                break
    restore(best_snap)
    return history


def fit_scaler(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature mean/std; constant features get std 1 to stay invertible."""
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    return mean, std


def standardize(X: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return (X - mean) / std


def destandardize(X: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return X * std + mean


def _chrono_split(n: int, fraction: float) -> int:
    """Index where the validation tail starts; keeps >= 1 training row."""
    if fraction <= 0.0 or n < 2:
        return n
    n_val = int(np.floor(n * fraction))
    n_val = min(max(n_val, 1), n - 1)
    return n - n_val


def train_arrays(
    net: DenseNetwork,
    X: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig,
    sample_weight: np.ndarray | None = None,
) -> tuple[DenseNetwork, dict]:
    """Mini-batch SGD with momentum on raw (X, y) arrays.

    Fits and installs the input standardizer (training split only) when the
    network does not carry one yet; otherwise the existing one is reused, as
    required for finetuning pre-trained components.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValidationError("training data must be a non-empty 2-D array")
    if X.shape[0] != y.shape[0]:
        raise ValidationError("X and y lengths must match")
    if X.shape[1] != net.input_dim or y.shape[1] != net.output_dim:
        raise ValidationError(
            f"network is {net.input_dim}->{net.output_dim}, data is {X.shape[1]}->{y.shape[1]}"
        )
    if not np.all(np.isfinite(y)):
        raise ValidationError("labels must be finite")
    if sample_weight is not None:
        sample_weight = np.asarray(sample_weight, dtype=float)
        if sample_weight.shape != (X.shape[0],):
            raise ValidationError("sample_weight length must match data")
        if np.all(sample_weight <= 0):
            raise ValidationError("sample_weight must contain positive entries")

    out = net.copy()
    split = _chrono_split(X.shape[0], cfg.validation_fraction)
    if out.x_mean is None:
        out.x_mean, out.x_std = fit_scaler(X[:split])
    X_std = standardize(X, out.x_mean, out.x_std)
    X_tr, y_tr = X_std[:split], y[:split]
    w_tr = None if sample_weight is None else sample_weight[:split]
    X_val = X_std[split:] if split < X.shape[0] else None
    y_val = y[split:] if split < X.shape[0] else None

    history = _fit_stack(
        out.weights, out.biases, out.activations, out.freeze_mask, X_tr, y_tr, cfg, w_tr, X_val, y_val
    )
    return out, history


def train(
    net: DenseNetwork,
    data: TimeSeriesDataset,
    cfg: TrainConfig,
    sample_weight: np.ndarray | None = None,
) -> tuple[DenseNetwork, dict]:
    """Train on a labeled dataset (records with missing power are skipped)."""
    if not data.has_power:
        raise ValidationError("dataset carries no power labels")
    mask = data.labeled_mask
    if not mask.any():
        raise ValidationError("dataset has no labeled records")
    X = resolve_inputs(net, data)[mask]
    y = data.power[mask]
    w = None if sample_weight is None else np.asarray(sample_weight, dtype=float)[mask]
    return train_arrays(net, X, y, cfg, sample_weight=w)


def finetune(
    net: DenseNetwork,
    data: TimeSeriesDataset,
    freeze: Sequence[bool],
    cfg: TrainConfig,
) -> DenseNetwork:
    """Train with the given freeze mask installed; frozen layers stay bitwise."""
    if len(freeze) != net.n_layers:
        raise ValidationError("freeze mask length must equal layer count")
    tuned = net.copy()
    tuned.freeze_mask = [bool(f) for f in freeze]
    trained, _ = train(tuned, data, cfg)
    return trained


def grad_check(net: DenseNetwork, sample: tuple[np.ndarray, np.ndarray], epsilon: float = 1e-5) -> float:
    """Max relative error between backprop and central differences (MSE loss).

    Only unfrozen parameters are compared; frozen layers are excluded from
    both sides.
    """
    if epsilon <= 0:
        raise ValidationError("epsilon must be positive")
    x, y = sample
    x = np.asarray(x, dtype=float).reshape(1, -1)
    y = np.asarray(y, dtype=float).reshape(1, -1)
    work = net.copy()
    x_std = work._standardized(x)

    def loss() -> float:
        As, _ = _forward_cache(work.weights, work.biases, work.activations, x_std)
        return float(np.mean((As[-1] - y) ** 2))

    As, Zs = _forward_cache(work.weights, work.biases, work.activations, x_std)
    d_out = 2.0 * (As[-1] - y) / y.shape[1]
    dWs, dbs, _ = _backward(work.weights, work.activations, As, Zs, d_out)

    max_rel = 0.0
    for l in range(work.n_layers):
        if work.freeze_mask[l]:
            continue
        for arr, grad in ((work.weights[l], dWs[l]), (work.biases[l], dbs[l])):
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = arr[idx]
                arr[idx] = orig + epsilon
                up = loss()
                arr[idx] = orig - epsilon
                down = loss()
                arr[idx] = orig
                g_num = (up - down) / (2.0 * epsilon)
                g_ana = grad[idx]
                rel = abs(g_ana - g_num) / max(abs(g_ana) + abs(g_num), 1e-12)
                max_rel = max(max_rel, rel)
    return max_rel


def train_autoencoder(
    features: np.ndarray,
    code_dim: int,
    cfg: TrainConfig,
    activation: str = "tanh",
    hidden: Sequence[int] = (),
) -> tuple[DenseNetwork, DenseNetwork]:
    """Train encoder/decoder minimizing reconstruction MSE.

    ``features`` are expected pre-standardized; the reconstruction target is
    the input itself. The decoder output layer is linear.
    """
    features = np.asarray(features, dtype=float)
    if features.ndim != 2 or features.shape[0] == 0:
        raise ValidationError("features must be a non-empty 2-D array")
    d = features.shape[1]
    if not 1 <= code_dim < d:
        raise ValidationError(f"code_dim must lie in [1, {d - 1}]")
    hidden = [int(h) for h in hidden]
    dims = [d, *hidden, code_dim, *reversed(hidden), d]
    n_enc = len(hidden) + 1
    acts = [activation] * n_enc + [activation] * len(hidden) + ["identity"]
    net = init_network(dims, acts, cfg.seed)
    trained, _ = train_arrays(net, features, features, cfg)

    encoder = DenseNetwork(
        weights=[W.copy() for W in trained.weights[:n_enc]],
        biases=[b.copy() for b in trained.biases[:n_enc]],
        activations=list(trained.activations[:n_enc]),
        freeze_mask=[False] * n_enc,
        rng_seed=cfg.seed,
        x_mean=None if trained.x_mean is None else trained.x_mean.copy(),
        x_std=None if trained.x_std is None else trained.x_std.copy(),
    )
    decoder = DenseNetwork(
        weights=[W.copy() for W in trained.weights[n_enc:]],
        biases=[b.copy() for b in trained.biases[n_enc:]],
        activations=list(trained.activations[n_enc:]),
        freeze_mask=[False] * (len(dims) - 1 - n_enc),
        rng_seed=cfg.seed,
    )
    return encoder, decoder


def encode(encoder: DenseNetwork, x: np.ndarray) -> np.ndarray:
    """Forward pass through an encoder; vector in -> (code_dim,), matrix in
    -> (n, code_dim)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return forward(encoder, x)
    if x.ndim != 2 or x.shape[1] != encoder.input_dim:
        raise ValidationError(f"expected (n, {encoder.input_dim}) input, got {x.shape}")
    a = encoder._standardized(x)
    for W, b, act in zip(encoder.weights, encoder.biases, encoder.activations):
        a = _act(act, a @ W + b)
    return a


def save_model(net: DenseNetwork, path) -> None:
    Path(path).write_text(json.dumps(net.to_json_dict()))


def load_model(path) -> DenseNetwork:
    return DenseNetwork.from_json_dict(json.loads(Path(path).read_text()))
