"""Normalised flow-matching paths, the QFM objective and vector fields.

A training pair ``(x0, x1 = x0 + sigma_hat * eps)`` is interpolated linearly,
``x_t = (1 - t) x0 + t x1``, and the regression target is the displacement
rescaled to the maximal noise level,
``(sigma_max / sigma_hat) (x1 - x0) = sigma_max * eps``.

The trainable field is a small fully connected tanh network on flattened
states with ``(t, sigma_hat)`` appended as two extra inputs. Gradients are
computed by hand and optimised with Adam.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .errors import ParameterError, ShapeError, TrainingDivergenceError
from .image_core import as_image

DEFAULT_RESOLUTION = (32, 32)
DEFAULT_HIDDEN = (256,)


class VectorField(Protocol):
    kind: str

    def __call__(self, x: np.ndarray, t: float, sigma_hat: float) -> np.ndarray: ...


@dataclass(frozen=True)
class PathSample:
    x0: np.ndarray
    x1: np.ndarray
    x_t: np.ndarray
    t: float
    sigma_hat: float
    target: np.ndarray


def _check_levels(sigma_hat, sigma_max):
    if not sigma_hat > 0:
        raise ParameterError(f"sigma_hat must be positive, got {sigma_hat}")
    if not sigma_max > 0:
        raise ParameterError(f"sigma_max must be positive, got {sigma_max}")


def interpolate(x0: np.ndarray, x1: np.ndarray, t: float) -> np.ndarray:
    # endpoints are returned exactly, avoiding 0*x rounding artefacts
    if t == 0:
        return x0.copy()
    if t == 1:
        return x1.copy()
    return (1.0 - t) * x0 + t * x1


def make_path_sample(
    x0, sigma_hat: float, sigma_max: float, t: float, seed: int | None = None, eps=None
) -> PathSample:
    """Draw ``eps``, build ``x1 = x0 + sigma_hat * eps`` and the path state at ``t``.

    Pass ``eps`` explicitly to reuse one noise draw across several times.
    """
    x0 = as_image(x0)
    _check_levels(sigma_hat, sigma_max)
    if sigma_hat > sigma_max:
        raise ParameterError(f"sigma_hat {sigma_hat} exceeds sigma_max {sigma_max}")
    if not 0.0 <= t <= 1.0:
        raise ParameterError(f"t must lie in [0, 1], got {t}")
    if eps is None:
        eps = np.random.default_rng(seed).standard_normal(x0.shape)
    elif np.shape(eps) != x0.shape:
        raise ShapeError(f"eps shape {np.shape(eps)} does not match image {x0.shape}")
    x1 = x0 + sigma_hat * eps
    target = (sigma_max / sigma_hat) * (x1 - x0)
    return PathSample(x0, x1, interpolate(x0, x1, t), float(t), float(sigma_hat), target)


class OracleField:
    """The exact normalised field of one pair, constant in ``(x, t, sigma_hat)``."""

    kind = "oracle"

    def __init__(self, x0, x1, sigma_hat: float, sigma_max: float = 1.0):
        x0 = as_image(x0)
        x1 = as_image(x1)
        if x0.shape != x1.shape:
            raise ShapeError(f"x0 {x0.shape} and x1 {x1.shape} differ in shape")
        _check_levels(sigma_hat, sigma_max)
        self.resolution = x0.shape
        self.sigma_max = sigma_max
        self.value = (sigma_max / sigma_hat) * (x1 - x0)
        self.value.setflags(write=False)

    def __call__(self, x, t, sigma_hat):
        if np.shape(x) != self.resolution:
            raise ShapeError(f"state shape {np.shape(x)} does not match field {self.resolution}")
        return self.value


    def to_dict(self) -> dict:
        h, w = self.resolution
        return {
            "kind": "oracle",
            "resolution": [h, w],
            "sigma_max": self.sigma_max,
            "value": self.value.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "OracleField":
        value = np.asarray(obj["value"], dtype=np.float64).reshape(obj["resolution"])
        # x0 = 0, x1 = value and sigma_hat = sigma_max reproduce the stored field exactly
        return cls(np.zeros_like(value), value, obj["sigma_max"], obj["sigma_max"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")


def oracle_field(x0, x1, sigma_hat: float, sigma_max: float = 1.0) -> OracleField:
    return OracleField(x0, x1, sigma_hat, sigma_max)


class MlpField:
    """Fully connected tanh network, input ``d + 2`` (state, t, sigma_hat), output ``d``.

    ``weights[i]`` has shape ``(fan_out, fan_in)``.
    """

    kind = "mlp"

    def __init__(self, resolution, weights, biases, sigma_max: float = 1.0, seed: int = 0):
        self.resolution = (int(resolution[0]), int(resolution[1]))
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.sigma_max = float(sigma_max)
        self.seed = seed
        self._validate()

    @classmethod
    def init(cls, resolution=DEFAULT_RESOLUTION, hidden=DEFAULT_HIDDEN, seed=0, sigma_max=1.0):
        """Uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` initialisation, seeded."""
        h, w = resolution
        if h < 1 or w < 1:
            raise ParameterError(f"invalid resolution {resolution}")
        sizes = [h * w + 2, *hidden, h * w]
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(resolution, weights, biases, sigma_max=sigma_max, seed=seed)

    def _validate(self):
        d = self.resolution[0] * self.resolution[1]
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("weights and biases must be non-empty lists of equal length")
        fan_in = d + 2
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or w.shape[1] != fan_in or b.shape != (w.shape[0],):
                raise ShapeError(f"layer shapes do not chain: {w.shape}, {b.shape}")
            fan_in = w.shape[0]
        if fan_in != d:
            raise ShapeError(f"output size {fan_in} does not match state size {d}")
        if not all(np.all(np.isfinite(p)) for p in self.parameters()):
            raise ParameterError("field parameters must be finite")

    @property
    def hidden(self) -> tuple[int, ...]:
        return tuple(w.shape[0] for w in self.weights[:-1])

    @property
    def dim(self) -> int:
        return self.resolution[0] * self.resolution[1]

    def parameters(self) -> list[np.ndarray]:
        """Parameter arrays in the fixed order W1, b1, W2, b2, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @property
    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def copy(self) -> "MlpField":
        return copy.deepcopy(self)

    def inputs(self, states: np.ndarray, t, sigma_hat) -> np.ndarray:
        """Stack flattened states with their (t, sigma_hat) columns."""
        n = states.shape[0]
        x = states.reshape(n, -1)
        if x.shape[1] != self.dim:
            raise ShapeError(f"state size {x.shape[1]} does not match field size {self.dim}")
        cond = np.empty((n, 2))
        cond[:, 0] = t
        cond[:, 1] = sigma_hat
        return np.concatenate([x, cond], axis=1)

    def forward(self, inputs: np.ndarray):
        """Return outputs of shape ``(n, d)`` and the activations backward needs."""
        acts = [inputs]
        a = inputs
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w.T + b
            a = z if i == last else np.tanh(z)
            acts.append(a)
        return a, acts

    def backward(self, acts, grad_out: np.ndarray) -> list[np.ndarray]:
        """Parameter gradients given ``dL/d(output)``, in :meth:`parameters` order."""
        grads = [None] * (2 * len(self.weights))
        delta = grad_out
        for i in range(len(self.weights) - 1, -1, -1):
            grads[2 * i] = delta.T @ acts[i]
            grads[2 * i + 1] = delta.sum(axis=0)
            if i:
                delta = (delta @ self.weights[i]) * (1.0 - acts[i] ** 2)
        return grads

    def __call__(self, x, t, sigma_hat):
        if np.shape(x) != self.resolution:
            raise ShapeError(f"state shape {np.shape(x)} does not match field {self.resolution}")
        out, _ = self.forward(self.inputs(np.asarray(x, dtype=np.float64)[None], t, sigma_hat))
        return out.reshape(self.resolution)

    def to_dict(self) -> dict:
        return {
            "kind": "mlp",
            "resolution": list(self.resolution),
            "hidden": list(self.hidden),
            "layers": [
                {
                    "rows": int(w.shape[0]),
                    "cols": int(w.shape[1]),
                    "w": w.ravel().tolist(),
                    "b": b.tolist(),
                }
                for w, b in zip(self.weights, self.biases)
            ],
            "sigma_max": self.sigma_max,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "MlpField":
        if obj.get("kind") != "mlp":
            raise ParameterError(f"unsupported checkpoint kind {obj.get('kind')!r}")
        try:
            weights = [
                np.asarray(layer["w"], dtype=np.float64).reshape(layer["rows"], layer["cols"])
                for layer in obj["layers"]
            ]
            biases = [np.asarray(layer["b"], dtype=np.float64) for layer in obj["layers"]]
            field_ = cls(obj["resolution"], weights, biases, obj["sigma_max"], obj.get("seed", 0))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, (ParameterError, ShapeError)):
                raise
            raise ParameterError(f"invalid checkpoint: {exc}") from exc
        if list(field_.hidden) != list(obj.get("hidden", field_.hidden)):
            raise ShapeError("checkpoint 'hidden' does not match its layers")
        return field_

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "MlpField":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _field_outputs(field: VectorField, batch: Sequence[PathSample]) -> np.ndarray:
    if isinstance(field, MlpField):
        states = np.stack([s.x_t for s in batch])
        if states.shape[1:] != field.resolution:
            raise ShapeError(f"sample shape {states.shape[1:]} does not match field {field.resolution}")
        t = np.array([s.t for s in batch])
        sig = np.array([s.sigma_hat for s in batch])
        out, _ = field.forward(field.inputs(states, t, sig))
        return out.reshape(states.shape)
    return np.stack([field(s.x_t, s.t, s.sigma_hat) for s in batch])


def qfm_loss(field: VectorField, batch: Sequence[PathSample]) -> float:
    """Batch mean of the per-sample mean squared residual to the normalised target."""
    if not batch:
        raise ParameterError("batch must not be empty")
    targets = np.stack([s.target for s in batch])
    out = _field_outputs(field, batch)
    if out.shape != targets.shape:
        raise ShapeError(f"field output {out.shape} does not match targets {targets.shape}")
    return float(np.mean(np.mean((out - targets).reshape(len(batch), -1) ** 2, axis=1)))


def loss_and_gradients(field: MlpField, batch: Sequence[PathSample]):
    """:func:`qfm_loss` and its gradient with respect to every parameter."""
    if not batch:
        raise ParameterError("batch must not be empty")
    n = len(batch)
    states = np.stack([s.x_t for s in batch])
    if states.shape[1:] != field.resolution:
        raise ShapeError(f"sample shape {states.shape[1:]} does not match field {field.resolution}")
    t = np.array([s.t for s in batch])
    sig = np.array([s.sigma_hat for s in batch])
    out, acts = field.forward(field.inputs(states, t, sig))
    resid = out - np.stack([s.target for s in batch]).reshape(n, -1)
    loss = float(np.mean(np.mean(resid**2, axis=1)))
    grads = field.backward(acts, (2.0 / (n * field.dim)) * resid)
    return loss, grads


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 4
    epochs: int = 100
    sigma_max: float = 1.0
    noise_level_range: tuple[float, float] = (0.05, 1.0)
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        lo, hi = self.noise_level_range
        self.noise_level_range = (float(lo), float(hi))
        if not 0 < lo <= hi <= self.sigma_max:
            raise ParameterError(
                f"noise_level_range must satisfy 0 < low <= high <= sigma_max, got {(lo, hi)}"
            )
        if not self.learning_rate >= 0:
            raise ParameterError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ParameterError("batch_size and epochs must be >= 1")


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainResult:
    field: MlpField
    history: list[float] = field(default_factory=list)


def train(mlp: MlpField, dataset, cfg: TrainConfig) -> TrainResult:
    """Fit ``mlp`` to the normalised target field on clean images ``dataset``.

    Every epoch visits the images in a fresh random order and gives each a
    fresh ``t ~ U[0, 1]``, ``sigma_hat ~ U(noise_level_range)`` and noise draw.
    The input field is left untouched; a trained copy is returned together
    with the per-epoch mean loss.
    """
    images = [as_image(x) for x in dataset]
    if not images:
        raise ParameterError("training dataset is empty")
    for x in images:
        if x.shape != mlp.resolution:
            raise ShapeError(f"dataset image {x.shape} does not match field {mlp.resolution}")
    if cfg.sigma_max != mlp.sigma_max:
        raise ParameterError(f"cfg.sigma_max {cfg.sigma_max} differs from field {mlp.sigma_max}")

    net = mlp.copy()
    opt = Adam(net.parameters(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    rng = np.random.default_rng(cfg.seed)
    lo, hi = cfg.noise_level_range
    history = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(images))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = []
            for idx in order[start:start + cfg.batch_size]:
                t = rng.uniform(0.0, 1.0)
                sig = rng.uniform(lo, hi)
                eps = rng.standard_normal(mlp.resolution)
                batch.append(make_path_sample(images[idx], sig, cfg.sigma_max, t, eps=eps))
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = loss_and_gradients(net, batch)
            if not math.isfinite(loss):
                raise TrainingDivergenceError(epoch)
            total += loss * len(batch)
            opt.step(grads)
        history.append(total / len(images))
    return TrainResult(net, history)


def finite_difference_gradients(field: MlpField, batch, flat_indices, epsilon: float) -> np.ndarray:
    """Central differences of :func:`qfm_loss` at the given flat parameter indices."""
    params = field.parameters()
    offsets = np.cumsum([0] + [p.size for p in params])
    out = np.empty(len(flat_indices))
    for j, flat in enumerate(flat_indices):
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        view = params[k].reshape(-1)
        pos = flat - offsets[k]
        orig = view[pos]
        view[pos] = orig + epsilon
        up = qfm_loss(field, batch)
        view[pos] = orig - epsilon
        down = qfm_loss(field, batch)
        view[pos] = orig
        out[j] = (up - down) / (2.0 * epsilon)
    return out


def gradient_check(
    field: MlpField,
    sample,
    epsilon: float = 1e-5,
    n_params: int = 100,
    seed: int = 0,
    floor: float = 1e-8,
) -> float:
    """Max relative error of analytic gradients against central differences.

    ``sample`` is a :class:`PathSample` or a batch of them. The error for one
    parameter is ``|a - n| / max(|a|, |n|, floor)``; the floor keeps exactly
    or nearly vanishing gradients from dividing by zero.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ParameterError(f"epsilon must lie in [1e-7, 1e-3], got {epsilon}")
    batch = [sample] if isinstance(sample, PathSample) else list(sample)
    _, grads = loss_and_gradients(field, batch)
    analytic = np.concatenate([g.ravel() for g in grads])
    rng = np.random.default_rng(seed)
    count = min(max(n_params, 100), analytic.size)
    idx = np.sort(rng.choice(analytic.size, size=count, replace=False))
    numeric = finite_difference_gradients(field, batch, idx, epsilon)
    a = analytic[idx]
    denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), floor)
    return float(np.max(np.abs(a - numeric) / denom))


def load_field(path):
    """Load an ``mlp`` or ``oracle`` field checkpoint."""
    try:
        obj = json.loads(Path(path).read_text())
    except ValueError as exc:
        raise ParameterError(f"{path}: not a JSON checkpoint ({exc})") from exc
    kind = obj.get("kind") if isinstance(obj, dict) else None
    if kind == "mlp":
        return MlpField.from_dict(obj)
    if kind == "oracle":
        try:
            return OracleField.from_dict(obj)
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, (ParameterError, ShapeError)):
                raise
            raise ParameterError(f"{path}: invalid oracle checkpoint ({exc})") from exc
    raise ParameterError(f"{path}: unsupported checkpoint kind {kind!r}")
