"""
Dense tanh MLPs with hand-written backpropagation, plus the actor-critic
policy built from them.

Weights use the ``(out, in)`` layout, so a layer computes ``x @ W.T + b``.
Hidden layers apply ``tanh``; the output layer is affine.
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

from .errors import CheckpointVersionError, InvalidInputError

CHECKPOINT_VERSION = 1
LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
LOG_STD_INIT = -0.5
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass
class MlpParameters:
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise InvalidInputError("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise InvalidInputError(f"layer {i}: weight {w.shape} and bias {b.shape} do not match")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise InvalidInputError(f"layer {i} expects {w.shape[1]} inputs, previous layer emits {self.weights[i - 1].shape[0]}")

    @property
    def layer_sizes(self):
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    def arrays(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self):
        return MlpParameters([w.copy() for w in self.weights], [b.copy() for b in self.biases])


@dataclass
class PolicyParameters:
    actor: MlpParameters
    critic: MlpParameters
    log_std: np.ndarray

    def arrays(self):
        """All trainable arrays (shared, not copies) in a fixed order."""
        return self.actor.arrays() + self.critic.arrays() + [self.log_std]

    def clamp_log_std(self):
        np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX, out=self.log_std)

    def copy(self):
        return PolicyParameters(self.actor.copy(), self.critic.copy(), self.log_std.copy())


def _orthogonal(rng, rows, cols, gain):
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q


def initialize(layer_sizes, seed=None, output_gain=1.0, hidden_gain=np.sqrt(2.0), rng=None):
    """
    Orthogonally initialized MLP with zero biases.

    Hidden layers use ``hidden_gain``; the last layer uses ``output_gain``.
    Pass either ``seed`` or an existing ``rng``.
    """
    if len(layer_sizes) < 2 or min(layer_sizes) < 1:
        raise InvalidInputError(f"invalid layer sizes {layer_sizes}")
    rng = rng if rng is not None else np.random.default_rng(seed)
    weights, biases = [], []
    n_layers = len(layer_sizes) - 1
    for i in range(n_layers):
        fan_in, fan_out = layer_sizes[i], layer_sizes[i + 1]
        gain = output_gain if i == n_layers - 1 else hidden_gain
        weights.append(_orthogonal(rng, fan_out, fan_in, gain))
        biases.append(np.zeros(fan_out))
    return MlpParameters(weights, biases)


def init_policy(seed, obs_size=17, action_size=4, hidden=(64, 64)):
    rng = np.random.default_rng(seed)
    actor = initialize((obs_size, *hidden, action_size), output_gain=0.01, rng=rng)
    critic = initialize((obs_size, *hidden, 1), output_gain=1.0, rng=rng)
    return PolicyParameters(actor, critic, np.full(action_size, LOG_STD_INIT))


def _check_input(params, x):
    x = np.asarray(x, dtype=np.float64)
    n_in = params.weights[0].shape[1]
    if x.shape[-1:] != (n_in,) or x.ndim > 2:
        raise InvalidInputError(f"expected input of width {n_in}, got shape {x.shape}")
    return x


def forward_cached(params, x):
    """Forward pass that also returns the per-layer activations needed by :func:`backward`."""
    x = _check_input(params, x)
    acts = [x]
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if i < last:
            h = np.tanh(h)
        acts.append(h)
    return h, acts


def forward(params, x):
    """Evaluate the network on one input vector or a batch of row vectors."""
    return forward_cached(params, x)[0]


@dataclass
class MlpGradients:
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def arrays(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


def backward(params, x, output_gradient, cache: Optional[list] = None):
    """
    Reverse-mode gradients of ``sum(forward(params, x) * output_gradient)``.

    Batched inputs sum their contributions. ``cache`` is the activation list
    from :func:`forward_cached` for the same ``x``; it is recomputed if omitted.

    Returns
    -------
    MlpGradients
        Gradients with the same shapes as ``params``.
    np.ndarray
        Gradient with respect to ``x``.
    """
    if cache is None:
        _, cache = forward_cached(params, x)
    g = np.asarray(output_gradient, dtype=np.float64)
    single = cache[0].ndim == 1
    n = len(params.weights)
    gw, gb = [None] * n, [None] * n
    for i in range(n - 1, -1, -1):
        a_in = cache[i]
        if single:
            gw[i] = np.outer(g, a_in)
            gb[i] = g.copy()
        else:
            gw[i] = g.T @ a_in
            gb[i] = g.sum(axis=0)
        g = g @ params.weights[i]
        if i > 0:
            g = g * (1.0 - cache[i] ** 2)  # tanh'
    return MlpGradients(gw, gb), g


def log_squash_jacobian(u):
    """``log(1 - tanh(u)²)`` computed without cancellation for large ``|u|``."""
    return 2.0 * (np.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))


def gaussian_log_prob(u, mean, log_std):
    z = (u - mean) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - _HALF_LOG_2PI, axis=-1)


def squashed_log_prob(u, mean, log_std):
    """Log-density of ``tanh(u)`` when ``u ~ N(mean, exp(log_std)²)``."""
    return gaussian_log_prob(u, mean, log_std) - np.sum(log_squash_jacobian(u), axis=-1)


def sample_pre_squash(policy, obs, rng):
    """
    Draw the unsquashed Gaussian sample ``u`` for ``obs``.

    Returns ``(u, log_prob, mean)``, where ``log_prob`` is the density of
    the squashed action ``tanh(u)``.
    """
    mean = forward(policy.actor, obs)
    log_std = np.clip(policy.log_std, LOG_STD_MIN, LOG_STD_MAX)
    u = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
    return u, squashed_log_prob(u, mean, log_std), mean


def sample_action(policy, obs, rng):
    """Stochastic action in ``[-1, 1]^4`` and its log-probability."""
    u, logp, _ = sample_pre_squash(policy, obs, rng)
    return np.tanh(u), logp


def deterministic_action(policy, obs):
    return np.tanh(forward(policy.actor, obs))


def value(policy, obs):
    out = forward(policy.critic, obs)
    return out[..., 0]


# -- checkpoints ------------------------------------------------------------


def _pack_mlp(prefix, mlp, out):
    out[f"{prefix}_sizes"] = np.array(mlp.layer_sizes, dtype=np.int64)
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        out[f"{prefix}_w{i}"] = np.ascontiguousarray(w)
        out[f"{prefix}_b{i}"] = b


def _unpack_mlp(prefix, data):
    n = len(data[f"{prefix}_sizes"]) - 1
    return MlpParameters(
        [data[f"{prefix}_w{i}"].astype(np.float64) for i in range(n)],
        [data[f"{prefix}_b{i}"].astype(np.float64) for i in range(n)],
    )


def save_checkpoint(path, policy, metadata=None, extra_arrays=None):
    """
    Write a policy to an ``.npz`` archive.

    Arrays are stored as float64 in row-major order next to a JSON metadata
    string and the format version, so loading is bit-exact.
    """
    arrays = {"format_version": np.array(CHECKPOINT_VERSION, dtype=np.int64)}
    _pack_mlp("actor", policy.actor, arrays)
    _pack_mlp("critic", policy.critic, arrays)
    arrays["log_std"] = policy.log_std
    arrays["metadata"] = np.array(json.dumps(metadata or {}, sort_keys=True))
    for key, value in (extra_arrays or {}).items():
        arrays[f"extra_{key}"] = value
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp.npz")
    np.savez(tmp, **arrays)
    tmp.replace(path)
    return path


def load_checkpoint(path, with_extra=False):
    """Inverse of :func:`save_checkpoint`; returns ``(policy, metadata[, extra])``."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"]) if "format_version" in data else None
        if version != CHECKPOINT_VERSION:
            raise CheckpointVersionError(f"{path}: checkpoint format {version}, expected {CHECKPOINT_VERSION}")
        policy = PolicyParameters(
            _unpack_mlp("actor", data), _unpack_mlp("critic", data), data["log_std"].astype(np.float64)
        )
        metadata = json.loads(str(data["metadata"]))
        extra = {k[len("extra_"):]: data[k] for k in data.files if k.startswith("extra_")}
    if with_extra:
        return policy, metadata, extra
    return policy, metadata
