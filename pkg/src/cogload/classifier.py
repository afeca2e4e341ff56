"""Small feed-forward classifier over i-vectors (numpy, backprop by hand)."""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, NumericalError, ValidationError
from .labels import LABELS, N_CLASSES

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass
class MlpModel:
    """ReLU hidden layers, softmax output over the three workload classes."""

    weights: list
    biases: list

    def __post_init__(self):
        self.weights = [np.asarray(W, dtype=np.float64) for W in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValidationError("need one bias vector per weight matrix")
        for W, b, W_next in zip(self.weights, self.biases, self.weights[1:] + [None]):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ValidationError("bias length must match layer width")
            if W_next is not None and W_next.shape[0] != W.shape[1]:
                raise ValidationError("consecutive layer shapes do not chain")
        if self.weights[-1].shape[1] != N_CLASSES:
            raise ValidationError(f"output layer must have {N_CLASSES} units")

    @property
    def layer_dims(self):
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    def params(self):
        return self.weights + self.biases

    def copy(self):
        return MlpModel([W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "layer_dims": self.layer_dims,
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "label_map": {str(i): name for i, name in enumerate(LABELS)},
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format_version") != FORMAT_VERSION:
            raise ValidationError(f"unsupported MLP format_version {d.get('format_version')}")
        if d.get("label_map") != {str(i): name for i, name in enumerate(LABELS)}:
            raise ValidationError("MLP label map does not match Easy/Medium/Difficult")
        model = cls([np.array(W) for W in d["weights"]], [np.array(b) for b in d["biases"]])
        if model.layer_dims != list(d["layer_dims"]):
            raise ValidationError("layer_dims disagree with parameter shapes")
        return model


def save_mlp(model, path, **extra):
    with open(path, "w") as fh:
        json.dump({**model.to_dict(), **extra}, fh)


def load_mlp(path):
    with open(path) as fh:
        return MlpModel.from_dict(json.load(fh))


@dataclass(frozen=True)
class TrainConfig:
    hidden: tuple = (32,)
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 64
    max_epochs: int = 200
    patience: int = 20
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.max_epochs < 0 or self.patience < 0:
            raise ConfigError("max_epochs and patience must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must be in [0, 1)")

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown mlp fields: {sorted(unknown)}")
        return cls(**d)


def init_mlp(layer_dims, seed=0):
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(weights, biases)


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _forward(model, X):
    acts = [X]
    h = X
    for W, b in zip(model.weights[:-1], model.biases[:-1]):
        h = np.maximum(h @ W + b, 0.0)
        acts.append(h)
    logits = h @ model.weights[-1] + model.biases[-1]
    return acts, logits


def loss_and_grads(model, X, y):
    """Mean cross-entropy and its gradients (weights list, biases list)."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    acts, logits = _forward(model, X)
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    n = len(X)
    loss = float(np.mean(log_norm - z[np.arange(n), y]))
    delta = softmax(logits)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    gW = [None] * len(model.weights)
    gb = [None] * len(model.biases)
    for layer in range(len(model.weights) - 1, -1, -1):
        gW[layer] = acts[layer].T @ delta
        gb[layer] = delta.sum(axis=0)
        if layer:
            delta = (delta @ model.weights[layer].T) * (acts[layer] > 0)
    return loss, gW, gb


def predict_proba(model, X):
    """Class posteriors for one vector (3,) or a batch (n, 3)."""
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X2 = X[None, :] if single else X
    if X2.shape[1] != model.layer_dims[0]:
        raise ValidationError(f"input dim {X2.shape[1]} does not match model input {model.layer_dims[0]}")
    probs = softmax(_forward(model, X2)[1])
    return probs[0] if single else probs


def predict(model, X):
    """Argmax label; ``np.argmax`` resolves ties to the lowest class index."""
    return np.argmax(predict_proba(model, X), axis=-1)


def accuracy(model, X, y):
    return float(np.mean(predict(model, X) == np.asarray(y)))


def train_mlp(X, y, config: TrainConfig = TrainConfig(), validation=None):
    """Mini-batch SGD with momentum on mean cross-entropy.

    With ``validation=(Xv, yv)`` the parameters with the best validation
    accuracy are returned and training stops after ``patience`` epochs
    without improvement.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or len(X) == 0 or len(y) != len(X):
        raise ValidationError("training set must be a non-empty (n, d) matrix with n labels")
    if np.any((y < 0) | (y >= N_CLASSES)):
        raise ValidationError("labels must be 0, 1 or 2")
    if len(np.unique(y)) == 1:
        warnings.warn("training set contains a single class", RuntimeWarning, stacklevel=2)
    model = init_mlp([X.shape[1], *config.hidden, N_CLASSES], seed=config.seed)
    rng = np.random.default_rng([config.seed, 1])
    velocity = [np.zeros_like(p) for p in model.params()]
    best, best_acc, stale = None, -1.0, 0
    for epoch in range(config.max_epochs):
        order = rng.permutation(len(X))
        for start in range(0, len(X), config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, gW, gb = loss_and_grads(model, X[idx], y[idx])
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite loss at epoch {epoch} batch {start // config.batch_size}")
            params = model.params()
            for p, g, v in zip(params, gW + gb, velocity):
                v *= config.momentum
                v -= config.learning_rate * g
                p += v
        if validation is not None:
            acc = accuracy(model, *validation)
            if acc > best_acc:
                best, best_acc, stale = model.copy(), acc, 0
            else:
                stale += 1
                if stale > config.patience:
                    logger.info("early stop at epoch %d (best val acc %.4f)", epoch, best_acc)
                    break
    if validation is not None and best is not None:
        return best
    return model
