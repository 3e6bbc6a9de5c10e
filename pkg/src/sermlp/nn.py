"""Deep MLP regressor with three scalar heads, trained by minibatch Adam with early stopping."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Scaler
from .objectives import LossWeights

DEFAULT_HIDDEN = (256, 128, 64, 32, 16)
N_HEADS = 3
LOSS_KINDS = ("mse_multitask", "ccc_multitask")
ACTIVATIONS = ("relu", "tanh")


@dataclass
class MlpModel:
    """Hidden layers ``weights[i] (fan_in, fan_out)`` and three linear heads stored as the
    columns of ``head_w (last_hidden, 3)``; column k only ever reads its own weights."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    head_w: np.ndarray
    head_b: np.ndarray
    activation: str = "relu"

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def hidden_sizes(self) -> tuple[int, ...]:
        return tuple(w.shape[1] for w in self.weights)

    def parameters(self) -> list[np.ndarray]:
        params = []
        for w, b in zip(self.weights, self.biases):
            params += [w, b]
        return params + [self.head_w, self.head_b]

    def parameter_names(self) -> list[str]:
        names = []
        for i in range(len(self.weights)):
            names += [f"W{i}", f"b{i}"]
        return names + ["head_w", "head_b"]

    def n_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def copy(self) -> "MlpModel":
        return copy.deepcopy(self)


def init_model(
    input_dim: int,
    hidden_sizes: Sequence[int] = DEFAULT_HIDDEN,
    activation: str = "relu",
    seed: int = 0,
) -> MlpModel:
    """Glorot-uniform weights, zero biases."""
    hidden_sizes = tuple(int(h) for h in hidden_sizes)
    if input_dim < 1 or not hidden_sizes or min(hidden_sizes) < 1:
        raise ValueError(f"invalid layer sizes: input {input_dim}, hidden {hidden_sizes}")
    if activation not in ACTIVATIONS:
        raise ValueError(f"activation must be one of {ACTIVATIONS}")
    rng = np.random.default_rng(seed)
    sizes = (input_dim,) + hidden_sizes
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    # each head is its own Dense(1): fan_out = 1
    limit = math.sqrt(6.0 / (hidden_sizes[-1] + 1))
    head_w = rng.uniform(-limit, limit, size=(hidden_sizes[-1], N_HEADS))
    return MlpModel(weights, biases, head_w, np.zeros(N_HEADS), activation)


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _act_grad(z: np.ndarray, h: np.ndarray, kind: str) -> np.ndarray:
    return (z > 0).astype(z.dtype) if kind == "relu" else 1.0 - h * h


def _forward(model: MlpModel, x: np.ndarray):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ValueError(f"model expects {model.input_dim} input columns, got shape {x.shape}")
    pre, acts = [], [x]
    h = x
    for w, b in zip(model.weights, model.biases):
        z = h @ w + b
        h = _act(z, model.activation)
        pre.append(z)
        acts.append(h)
    return h @ model.head_w + model.head_b, pre, acts


def predict(model: MlpModel, x) -> np.ndarray:
    """Predictions as an (n, 3) array, columns valence, arousal, dominance."""
    return _forward(model, x)[0]


def forward(model: MlpModel, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    out = predict(model, x)
    return out[:, 0], out[:, 1], out[:, 2]


def _ccc_and_grad(x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """CCC of prediction column ``x`` against ``y`` and its gradient with respect to ``x``."""
    n = x.size
    mx, my = x.mean(), y.mean()
    dx, dy = x - mx, y - my
    sxy = np.mean(dx * dy)
    denom = np.mean(dx * dx) + np.mean(dy * dy) + (mx - my) ** 2
    if denom == 0:
        return 1.0, np.zeros_like(x)
    num = 2.0 * sxy
    d_num = 2.0 * dy / n
    d_den = 2.0 * (dx + (mx - my)) / n
    return num / denom, (d_num * denom - num * d_den) / denom**2


def output_loss(out: np.ndarray, y: np.ndarray, loss_kind: str, weights: LossWeights) -> tuple[float, np.ndarray]:
    """Total loss over an (n, 3) prediction block and its gradient with respect to the block."""
    if out.shape != y.shape:
        raise ValueError(f"prediction shape {out.shape} != target shape {y.shape}")
    n = out.shape[0]
    if loss_kind == "mse_multitask":
        diff = out - y
        return float(np.mean(diff * diff)), 2.0 * diff / (N_HEADS * n)
    if loss_kind == "ccc_multitask":
        if n < 2:
            raise ValueError("CCC loss needs a minibatch of at least 2 rows")
        w = weights.as_array()
        loss, grad = 0.0, np.empty_like(out)
        for k in range(N_HEADS):
            c, g = _ccc_and_grad(out[:, k], y[:, k])
            loss += w[k] * (1.0 - c)
            grad[:, k] = -w[k] * g
        return float(loss), grad
    raise ValueError(f"unknown loss kind {loss_kind!r}")


def loss_value(model: MlpModel, x, y, loss_kind: str = "mse_multitask", weights: LossWeights | None = None) -> float:
    return output_loss(predict(model, x), np.asarray(y, dtype=np.float64), loss_kind, weights or LossWeights())[0]


def loss_and_gradients(
    model: MlpModel, x, y, loss_kind: str = "mse_multitask", alpha: float = 1 / 3, beta: float = 1 / 3
) -> tuple[float, list[np.ndarray]]:
    """Reverse-mode gradients, ordered like ``model.parameters()``."""
    out, pre, acts = _forward(model, x)
    loss, g = output_loss(out, np.asarray(y, dtype=np.float64), loss_kind, LossWeights(alpha, beta))
    grads_head_w = acts[-1].T @ g
    grads_head_b = g.sum(axis=0)
    gh = g @ model.head_w.T
    layer_grads = []
    for i in reversed(range(len(model.weights))):
        gz = gh * _act_grad(pre[i], acts[i + 1], model.activation)
        layer_grads.append((acts[i].T @ gz, gz.sum(axis=0)))
        gh = gz @ model.weights[i].T
    grads = []
    for gw, gb in reversed(layer_grads):
        grads += [gw, gb]
    return loss, grads + [grads_head_w, grads_head_b]


def backward(model: MlpModel, x, y, loss_kind: str = "mse_multitask", alpha: float = 1 / 3, beta: float = 1 / 3):
    return loss_and_gradients(model, x, y, loss_kind, alpha, beta)[1]


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_model(cls, model: MlpModel, **kw) -> "AdamState":
        params = model.parameters()
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kw)


def adam_step(state: AdamState, model: MlpModel, grads: Sequence[np.ndarray], learning_rate: float = 1e-3):
    """Bias-corrected Adam update, applied in place; returns ``(model, state)``."""
    params = model.parameters()
    if len(grads) != len(params):
        raise ValueError(f"expected {len(params)} gradient arrays, got {len(grads)}")
    for name, g, p in zip(model.parameter_names(), grads, params):
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name} at Adam step {state.step + 1}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return model, state


@dataclass
class TrainConfig:
    batch_size: int = 200
    max_epochs: int = 180
    patience: int = 10
    learning_rate: float = 1e-3
    loss_kind: str = "mse_multitask"
    alpha: float = 1.0 / 3.0
    beta: float = 1.0 / 3.0
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, max_epochs and patience must be positive")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}")
        LossWeights(self.alpha, self.beta)


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    dev_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0  # 1-based
    stopped_early: bool = False

    @property
    def epochs(self) -> int:
        return len(self.dev_loss)

    @property
    def best_dev_loss(self) -> float:
        return self.dev_loss[self.best_epoch - 1]


class EarlyStopping:
    """Stop once the monitored loss has not strictly improved for ``patience`` epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.wait = 0

    def update(self, epoch: int, loss: float) -> bool:
        if loss < self.best:
            self.best, self.best_epoch, self.wait = loss, epoch, 0
            return False
        self.wait += 1
        return self.wait >= self.patience


def train(model: MlpModel, train_set, dev_set, cfg: TrainConfig | None = None) -> tuple[MlpModel, TrainHistory]:
    """Fit on ``train_set = (X, Y)``; returns a copy holding the best-dev-loss parameters."""
    cfg = cfg or TrainConfig()
    x_tr, y_tr = (np.asarray(a, dtype=np.float64) for a in train_set)
    x_dev, y_dev = (np.asarray(a, dtype=np.float64) for a in dev_set)
    if x_tr.shape[0] == 0 or x_dev.shape[0] == 0:
        raise ValueError("training and development sets must be non-empty")
    if x_tr.shape[0] != y_tr.shape[0] or x_dev.shape[0] != y_dev.shape[0]:
        raise ValueError("feature and label row counts differ")
    weights = LossWeights(cfg.alpha, cfg.beta)
    min_batch = 2 if cfg.loss_kind == "ccc_multitask" else 1
    if cfg.loss_kind == "ccc_multitask" and (x_tr.shape[0] < 2 or x_dev.shape[0] < 2):
        raise ValueError("CCC loss needs at least 2 rows in train and dev")

    model = model.copy()
    best = model.copy()
    state = AdamState.for_model(model)
    rng = np.random.default_rng(cfg.seed)
    stopper = EarlyStopping(cfg.patience)
    history = TrainHistory()
    n = x_tr.shape[0]

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        total, seen = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            if idx.size < min_batch:
                continue
            loss, grads = loss_and_gradients(model, x_tr[idx], y_tr[idx], cfg.loss_kind, cfg.alpha, cfg.beta)
            if not math.isfinite(loss):
                raise FloatingPointError(f"non-finite training loss at epoch {epoch}")
            adam_step(state, model, grads, cfg.learning_rate)
            total += loss * idx.size
            seen += idx.size
        dev_loss = output_loss(predict(model, x_dev), y_dev, cfg.loss_kind, weights)[0]
        if not math.isfinite(dev_loss):
            raise FloatingPointError(f"non-finite development loss at epoch {epoch}")
        history.train_loss.append(total / max(seen, 1))
        history.dev_loss.append(dev_loss)
        stop = stopper.update(epoch, dev_loss)
        if stopper.best_epoch == epoch:
            best = model.copy()
        if stop:
            history.stopped_early = epoch < cfg.max_epochs
            break
    history.best_epoch = stopper.best_epoch
    return best, history


# --- checkpoints -----------------------------------------------------------------------

CHECKPOINT_FORMAT = "sermlp-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    model: MlpModel
    feature_scaler: Scaler | None = None
    label_scaler: Scaler | None = None
    feature_names: tuple[str, ...] = ()
    meta: dict = field(default_factory=dict)


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    """Write an ``.npz`` archive; see README for the layout."""
    model = ckpt.model
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "input_dim": model.input_dim,
        "hidden_sizes": list(model.hidden_sizes),
        "activation": model.activation,
        "feature_names": list(ckpt.feature_names),
        "feature_scaler": ckpt.feature_scaler.kind if ckpt.feature_scaler else None,
        "label_scaler": ckpt.label_scaler.kind if ckpt.label_scaler else None,
        "meta": ckpt.meta,
    }
    arrays = {"header": np.array(json.dumps(header, sort_keys=True))}
    for name, p in zip(model.parameter_names(), model.parameters()):
        arrays[name] = p
    for key, scaler in (("feature_scaler", ckpt.feature_scaler), ("label_scaler", ckpt.label_scaler)):
        if scaler is not None:
            arrays[f"{key}_offset"] = scaler.offset
            arrays[f"{key}_scale"] = scaler.scale
    with Path(path).open("wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path) -> Checkpoint:
    with np.load(str(path), allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
        n_layers = len(header["hidden_sizes"])
        model = MlpModel(
            [z[f"W{i}"].copy() for i in range(n_layers)],
            [z[f"b{i}"].copy() for i in range(n_layers)],
            z["head_w"].copy(),
            z["head_b"].copy(),
            header["activation"],
        )
        scalers = {}
        for key in ("feature_scaler", "label_scaler"):
            kind = header[key]
            scalers[key] = Scaler(kind, z[f"{key}_offset"].copy(), z[f"{key}_scale"].copy()) if kind else None
    return Checkpoint(model, scalers["feature_scaler"], scalers["label_scaler"], tuple(header["feature_names"]), header["meta"])


def train_config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
