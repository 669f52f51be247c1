"""Plain-numpy MLP classifier trained with SGD momentum.

Layers are fully connected with tanh activations and a softmax output; the
loss is mean cross-entropy in natural log.  Everything is float64 and every
random draw comes from an explicit generator, so identical seeds give
bit-identical training trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, TrainingDivergedError


@dataclass
class TrainerConfig:
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0005
    lr_drop_factor: float = 0.2
    lr_drop_points: tuple[float, ...] = (0.6, 0.8)
    batch_size: int = 128
    total_epochs: int = 20
    seed: int = 0
    hidden_layers: tuple[int, ...] = (128, 128)

    def __post_init__(self):
        object.__setattr__(self, "lr_drop_points", tuple(self.lr_drop_points))
        object.__setattr__(self, "hidden_layers", tuple(self.hidden_layers))
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigurationError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigurationError("weight_decay must be nonnegative")
        if not 0.0 < self.lr_drop_factor <= 1.0:
            raise ConfigurationError("lr_drop_factor must lie in (0, 1]")
        pts = self.lr_drop_points
        if any(not 0.0 < p < 1.0 for p in pts) or list(pts) != sorted(set(pts)):
            raise ConfigurationError(
                "lr_drop_points must be strictly increasing and inside (0, 1)"
            )
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be positive")
        if self.total_epochs < 1:
            raise ConfigurationError("total_epochs must be positive")
        if any(h < 1 for h in self.hidden_layers):
            raise ConfigurationError("hidden layer widths must be positive")


@dataclass
class ModelParams:
    """Per-layer weight matrices (fan_in, fan_out) and bias vectors."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def architecture(self) -> list[int]:
        return [w.shape[0] for w in self.weights] + [self.weights[-1].shape[1]]

    def copy(self) -> "ModelParams":
        return ModelParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def init_params(architecture, rng) -> ModelParams:
    """Fan-in scaled uniform init: each layer is U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    arch = [int(w) for w in architecture]
    if len(arch) < 2 or any(w < 1 for w in arch):
        raise ConfigurationError(f"bad architecture {arch}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    weights, biases = [], []
    for fan_in, fan_out in zip(arch[:-1], arch[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return ModelParams(weights, biases)


@dataclass
class ForwardResult:
    """Batch outputs: per-example loss, class distribution, and argmax class."""

    losses: np.ndarray
    probabilities: np.ndarray
    predictions: np.ndarray


def _activations(params: ModelParams, features: np.ndarray) -> list[np.ndarray]:
    """Post-activation values per layer; the last entry is the logits."""
    acts = [features]
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = acts[-1] @ w + b
        acts.append(z if i == last else np.tanh(z))
    return acts

def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def forward(params: ModelParams, features: np.ndarray, labels: np.ndarray) -> ForwardResult:
    """Score a batch without touching any state."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if features.ndim != 2:
        raise ConfigurationError("features must be a 2-d batch")
    if features.shape[1] != params.weights[0].shape[0]:
        raise ConfigurationError(
            f"feature width {features.shape[1]} does not match model input "
            f"{params.weights[0].shape[0]}"
        )
    if labels.shape != (features.shape[0],):
        raise ConfigurationError("labels must be a vector matching the batch")
    num_classes = params.weights[-1].shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ConfigurationError(f"labels outside [0, {num_classes})")
    logits = _activations(params, features)[-1]
    logp = _log_softmax(logits)
    losses = -logp[np.arange(len(labels)), labels]
    return ForwardResult(
        losses=losses,
        probabilities=np.exp(logp),
        predictions=logits.argmax(axis=1),
    )


def loss_and_gradients(params: ModelParams, features, labels):
    """Mean cross-entropy over the batch and its gradients w.r.t. every layer.

    Weight decay is not included here; it belongs to the update rule, not the
    loss surface being checked.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    batch = features.shape[0]
    acts = _activations(params, features)
    logp = _log_softmax(acts[-1])
    loss = float(-logp[np.arange(batch), labels].mean())

    delta = np.exp(logp)
    delta[np.arange(batch), labels] -= 1.0
    delta /= batch
    grads_w = [None] * len(params.weights)
    grads_b = [None] * len(params.biases)
    for i in range(len(params.weights) - 1, -1, -1):
        grads_w[i] = acts[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i].T) * (1.0 - acts[i] ** 2)
    return loss, (grads_w, grads_b)


@dataclass
class SGDState:
    """Momentum buffers plus counters for updates and examples back-propagated."""

    velocity_w: list[np.ndarray]
    velocity_b: list[np.ndarray]
    updates: int = 0
    backprops: int = 0


def init_sgd_state(params: ModelParams) -> SGDState:
    return SGDState(
        velocity_w=[np.zeros_like(w) for w in params.weights],
        velocity_b=[np.zeros_like(b) for b in params.biases],
    )


def sgd_step(
    params: ModelParams,
    features,
    labels,
    cfg: TrainerConfig,
    state: SGDState,
    lr: float,
) -> float:
    """One momentum SGD update on a batch, in place.  Returns the batch loss.

    Update order: weight decay is added to the gradient, the result is folded
    into the momentum buffer, then the step is applied at the given rate.
    """
    loss, (grads_w, grads_b) = loss_and_gradients(params, features, labels)
    finite = math.isfinite(loss) and all(
        np.isfinite(g).all() for g in grads_w + grads_b
    )
    if not finite:
        raise TrainingDivergedError("non-finite loss or gradient", iteration=state.updates)
    for w, b, gw, gb, vw, vb in zip(
        params.weights, params.biases, grads_w, grads_b, state.velocity_w, state.velocity_b
    ):
        np.add(gw, cfg.weight_decay * w, out=gw)
        np.add(gb, cfg.weight_decay * b, out=gb)
        vw *= cfg.momentum
        vw += gw
        vb *= cfg.momentum
        vb += gb
        w -= lr * vw
        b -= lr * vb
    state.updates += 1
    state.backprops += int(np.asarray(features).shape[0])
    return loss


def params_to_vector(params: ModelParams) -> np.ndarray:
    parts = []
    for w, b in zip(params.weights, params.biases):
        parts.append(w.ravel())
        parts.append(b.ravel())
    return np.concatenate(parts)


def vector_to_params(vector: np.ndarray, architecture) -> ModelParams:
    arch = [int(w) for w in architecture]
    weights, biases, pos = [], [], 0
    for fan_in, fan_out in zip(arch[:-1], arch[1:]):
        weights.append(vector[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out).copy())
        pos += fan_in * fan_out
        biases.append(vector[pos : pos + fan_out].copy())
        pos += fan_out
    if pos != vector.size:
        raise ConfigurationError(
            f"vector length {vector.size} does not match architecture {arch}"
        )
    return ModelParams(weights, biases)


def gradient_check(
    params: ModelParams,
    features,
    labels,
    epsilon: float = 1e-4,
    max_coords: int = 64,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    A random subset of parameter coordinates is probed; each probe costs two
    forward passes.  Coordinates where both routes are below 1e-8 in magnitude
    count as zero error.
    """
    if not 1e-6 <= epsilon <= 1e-3:
        raise ConfigurationError("epsilon outside the stable range [1e-6, 1e-3]")
    arch = params.architecture
    base = params_to_vector(params)
    _, (gw, gb) = loss_and_gradients(params, features, labels)
    analytic = params_to_vector(ModelParams(gw, gb))

    rng = np.random.default_rng(seed)
    count = min(max_coords, base.size)
    coords = rng.choice(base.size, size=count, replace=False)
    worst = 0.0
    for c in coords:
        probe = base.copy()
        probe[c] = base[c] + epsilon
        up, _ = _vector_loss(probe, arch, features, labels)
        probe[c] = base[c] - epsilon
        down, _ = _vector_loss(probe, arch, features, labels)
        numeric = (up - down) / (2.0 * epsilon)
        denom = max(abs(analytic[c]), abs(numeric))
        if denom < 1e-8:
            continue
        worst = max(worst, abs(analytic[c] - numeric) / denom)
    return worst


def _vector_loss(vector, architecture, features, labels):
    p = vector_to_params(vector, architecture)
    return loss_and_gradients(p, features, labels)[0], p


def prediction_entropy(distribution) -> float | np.ndarray:
    """Shannon entropy in nats of one distribution or a batch of them.

    The 0 * log 0 terms contribute zero.  Negative entries or rows that do
    not sum to one signal a numerical bug upstream and raise.
    """
    dist = np.asarray(distribution, dtype=np.float64)
    if dist.ndim not in (1, 2):
        raise ConfigurationError("expected a distribution vector or a batch of them")
    if (dist < 0).any():
        raise ConfigurationError("distribution has negative entries")
    sums = dist.sum(axis=-1)
    if not np.allclose(sums, 1.0, atol=1e-6):
        raise ConfigurationError("distribution does not sum to 1")
    terms = np.where(dist > 0, dist * np.log(np.where(dist > 0, dist, 1.0)), 0.0)
    ent = -terms.sum(axis=-1)
    return float(ent) if dist.ndim == 1 else ent


def learning_rate_at(progress: float, cfg: TrainerConfig) -> float:
    """Piecewise-constant schedule: the rate is cut by lr_drop_factor at each
    drop point, expressed as a fraction of total training."""
    if not 0.0 <= progress <= 1.0:
        raise ConfigurationError(f"progress {progress} outside [0, 1]")
    passed = sum(1 for p in cfg.lr_drop_points if progress >= p)
    return cfg.learning_rate * cfg.lr_drop_factor**passed


def save_checkpoint(params: ModelParams, path) -> None:
    """Write architecture and parameters; float64 round-trips exactly."""
    arrays = {"architecture": np.array(params.architecture, dtype=np.int64)}
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        arrays[f"w{i}"] = w
        arrays[f"b{i}"] = b
    np.savez(path, **arrays)


def load_checkpoint(path) -> ModelParams:
    with np.load(path) as data:
        arch = data["architecture"]
        n_layers = len(arch) - 1
        weights = [data[f"w{i}"].copy() for i in range(n_layers)]
        biases = [data[f"b{i}"].copy() for i in range(n_layers)]
    params = ModelParams(weights, biases)
    if params.architecture != [int(a) for a in arch]:
        raise ConfigurationError("checkpoint arrays do not match stored architecture")
    return params
