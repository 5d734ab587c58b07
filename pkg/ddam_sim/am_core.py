"""Associative-memory losses, gradients, feature maps and the design-domain projection.

A linear associative memory is a matrix X of shape (d_v, d_k') that recalls a value
vector from a key as ``X @ phi(k)``. Every loss here has the form
``f(X) = l(X, k, v) + R(X)`` for one of six retrieval-cost variants, and the design
domain is the Frobenius ball of radius B/2 around the origin.

All kernels are pure functions of their arguments and safe to call from several threads.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np
from numpy.typing import NDArray

from ddam_sim.errors import ConfigurationError, DataError, NumericError

MemoryMatrix = NDArray[np.float64]

# Relative slack when deciding whether a point already lies in the ball.
_RADIAL_TOL = 1e-12


class LossVariant(str, Enum):
    LINEAR_ATTENTION = "linear_attention"
    GATED_LINEAR_ATTENTION = "gated_linear_attention"
    DELTA_NET = "delta_net"
    SOFTMAX_NO_NORM = "softmax_no_norm"
    SOFTMAX_WITH_NORM = "softmax_with_norm"
    GATED_SOFTMAX = "gated_softmax"

    @property
    def gated(self) -> bool:
        return self in (LossVariant.GATED_LINEAR_ATTENTION, LossVariant.GATED_SOFTMAX)

    @property
    def uses_feature_map(self) -> bool:
        return self in (
            LossVariant.SOFTMAX_NO_NORM,
            LossVariant.SOFTMAX_WITH_NORM,
            LossVariant.GATED_SOFTMAX,
        )


class FeatureMapKind(str, Enum):
    IDENTITY = "identity"
    RANDOM_FOURIER = "random_fourier"


@dataclass(frozen=True)
class FeatureMapConfig:
    """Feature extractor phi applied to keys by the softmax variants."""

    output_dim: int
    kind: FeatureMapKind = FeatureMapKind.RANDOM_FOURIER
    seed: int = 0

    def __post_init__(self):
        if self.output_dim < 1:
            raise ConfigurationError(f"feature map output_dim must be >= 1, got {self.output_dim}")
        if self.kind == FeatureMapKind.RANDOM_FOURIER and self.output_dim % 2:
            raise ConfigurationError(
                f"random Fourier output_dim must be even (cos/sin halves), got {self.output_dim}"
            )


@dataclass(frozen=True)
class KeyValuePair:
    key: NDArray[np.float64]
    value: NDArray[np.float64]
    agent: int
    time: int


@dataclass(frozen=True, eq=False)
class LossSpec:
    """Loss variant of one agent, with its gating vector, feature map and gradient bound."""

    variant: LossVariant
    gating: NDArray[np.float64] | None = None
    feature_map: FeatureMapConfig | None = None
    grad_bound: float | None = None

    def __post_init__(self):
        if self.gating is not None:
            gating = np.asarray(self.gating, dtype=np.float64)
            if not np.all((gating == 0.0) | (gating == 1.0)):
                raise ConfigurationError("gating entries must be 0 or 1")
            object.__setattr__(self, "gating", gating)
        if self.grad_bound is not None:
            if not (math.isfinite(self.grad_bound) and self.grad_bound > 0):
                raise ConfigurationError(f"grad_bound must be finite and positive, got {self.grad_bound}")

    def with_grad_bound(self, grad_bound: float) -> "LossSpec":
        return LossSpec(self.variant, self.gating, self.feature_map, grad_bound)


@dataclass(frozen=True)
class KVStream:
    """Key/value streams of all agents, stored as dense arrays.

    ``keys[n, t - 1]`` and ``values[n, t - 1]`` hold agent n's pair at 1-based step t.
    """

    keys: NDArray[np.float64]
    values: NDArray[np.float64]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.keys.ndim != 3 or self.values.ndim != 3:
            raise ConfigurationError("streams must be (agents, steps, dim) arrays")
        if self.keys.shape[:2] != self.values.shape[:2]:
            raise ConfigurationError(
                f"key/value stream shapes disagree: {self.keys.shape} vs {self.values.shape}"
            )
        if not (np.all(np.isfinite(self.keys)) and np.all(np.isfinite(self.values))):
            raise NumericError("stream contains non-finite entries")

    @property
    def n_agents(self) -> int:
        return self.keys.shape[0]

    @property
    def horizon(self) -> int:
        return self.keys.shape[1]

    @property
    def d_k(self) -> int:
        return self.keys.shape[2]

    @property
    def d_v(self) -> int:
        return self.values.shape[2]

    def pair(self, n: int, t: int) -> KeyValuePair:
        if not 1 <= t <= self.horizon:
            raise DataError(f"stream of agent {n} exhausted: step {t} beyond horizon {self.horizon}")
        return KeyValuePair(self.keys[n, t - 1], self.values[n, t - 1], n, t)

    def batch(self, t: int) -> dict[int, KeyValuePair]:
        return {m: self.pair(m, t) for m in range(self.n_agents)}

    def truncate(self, horizon: int) -> "KVStream":
        if horizon > self.horizon:
            raise DataError(f"stream has {self.horizon} steps, {horizon} requested")
        return KVStream(self.keys[:, :horizon], self.values[:, :horizon], dict(self.metadata))

    def window(self, start: int, stop: int) -> "KVStream":
        """Steps start..stop (1-based, inclusive)."""
        return KVStream(self.keys[:, start - 1 : stop], self.values[:, start - 1 : stop], dict(self.metadata))


@lru_cache(maxsize=64)
def _fourier_frequencies(seed: int, n_freq: int, input_dim: int) -> NDArray[np.float64]:
    omega = np.random.default_rng(seed).standard_normal((n_freq, input_dim))
    omega.setflags(write=False)
    return omega


def apply_feature_map(cfg: FeatureMapConfig, k: NDArray[np.float64]) -> NDArray[np.float64]:
    """Map a key (or a stack of keys along the last axis) through phi."""
    k = np.asarray(k, dtype=np.float64)
    if cfg.kind == FeatureMapKind.IDENTITY:
        if k.shape[-1] != cfg.output_dim:
            raise ConfigurationError(
                f"identity feature map expects dimension {cfg.output_dim}, got {k.shape[-1]}"
            )
        return k.copy()
    half = cfg.output_dim // 2
    omega = _fourier_frequencies(cfg.seed, half, k.shape[-1])
    proj = k @ omega.T
    return np.concatenate([np.cos(proj), np.sin(proj)], axis=-1) / math.sqrt(half)


def feature_dim(spec: LossSpec, d_k: int) -> int:
    """Column count of X for this spec and key dimension."""
    if spec.variant.uses_feature_map:
        _require_parts(spec)
        return spec.feature_map.output_dim
    return d_k


def features(spec: LossSpec, k: NDArray[np.float64]) -> NDArray[np.float64]:
    if spec.variant.uses_feature_map:
        _require_parts(spec)
        return apply_feature_map(spec.feature_map, k)
    return np.asarray(k, dtype=np.float64)


def _require_parts(spec: LossSpec) -> None:
    if spec.variant.gated and spec.gating is None:
        raise ConfigurationError(f"{spec.variant.value} requires a gating vector")
    if spec.variant.uses_feature_map and spec.feature_map is None:
        raise ConfigurationError(f"{spec.variant.value} requires a feature map")


def _check_dims(spec: LossSpec, X: MemoryMatrix, feat: NDArray, v: NDArray) -> None:
    if X.ndim < 2 or X.shape[-1] != feat.shape[-1] or X.shape[-2] != v.shape[-1]:
        raise ConfigurationError(
            f"memory of shape {X.shape[-2:]} does not fit feature dim {feat.shape[-1]} "
            f"and value dim {v.shape[-1]}"
        )
    if spec.variant.gated and spec.gating.shape[0] != X.shape[-2]:
        raise ConfigurationError(
            f"gating length {spec.gating.shape[0]} does not match d_v={X.shape[-2]}"
        )


def _regularizer(spec: LossSpec, X: MemoryMatrix) -> NDArray | float:
    """R(X); broadcasts over a leading stack axis."""
    if spec.variant.gated:
        row_sq = np.sum(X * X, axis=-1)
        return 0.5 * np.sum((1.0 - spec.gating) * row_sq, axis=-1)
    if spec.variant == LossVariant.SOFTMAX_WITH_NORM:
        return 0.5 * np.sum(X * X, axis=(-2, -1))
    return 0.0


def _regularizer_grad(spec: LossSpec, X: MemoryMatrix) -> MemoryMatrix | float:
    if spec.variant.gated:
        return (1.0 - spec.gating)[:, None] * X
    if spec.variant == LossVariant.SOFTMAX_WITH_NORM:
        return X
    return 0.0


def eval_loss(spec: LossSpec, X: MemoryMatrix, kv: KeyValuePair) -> float:
    """f(X) = l(X, k, v) + R(X) for the spec's variant."""
    _require_parts(spec)
    feat = features(spec, kv.key)
    v = np.asarray(kv.value, dtype=np.float64)
    _check_dims(spec, X, feat, v)
    pred = X @ feat
    if spec.variant == LossVariant.DELTA_NET:
        residual = pred - v
        data_term = 0.5 * float(residual @ residual)
    else:
        data_term = -float(pred @ v)
    return data_term + float(_regularizer(spec, X))


def eval_grad(spec: LossSpec, X: MemoryMatrix, kv: KeyValuePair) -> MemoryMatrix:
    """Analytic gradient of eval_loss with respect to X."""
    _require_parts(spec)
    feat = features(spec, kv.key)
    v = np.asarray(kv.value, dtype=np.float64)
    _check_dims(spec, X, feat, v)
    if spec.variant == LossVariant.DELTA_NET:
        grad = np.outer(X @ feat - v, feat)
    else:
        grad = -np.outer(v, feat)
    return grad + _regularizer_grad(spec, X)


def batch_grad(
    spec: LossSpec,
    X: MemoryMatrix,
    keys: NDArray[np.float64],
    values: NDArray[np.float64],
    sample_weights: NDArray[np.float64],
) -> MemoryMatrix:
    """Sum over samples i of ``sample_weights[i] * grad f(X; k_i, v_i)``, all at one X."""
    _require_parts(spec)
    feats = features(spec, keys)
    _check_dims(spec, X, feats, values)
    s = np.asarray(sample_weights, dtype=np.float64)
    if spec.variant == LossVariant.DELTA_NET:
        residual = feats @ X.T - values
        grad = (s[:, None] * residual).T @ feats
    else:
        grad = -(s[:, None] * values).T @ feats
    return grad + float(np.sum(s)) * _regularizer_grad(spec, X)


def loss_series(
    spec: LossSpec,
    Xs: NDArray[np.float64],
    keys: NDArray[np.float64],
    values: NDArray[np.float64],
) -> NDArray[np.float64]:
    """Per-sample losses ``f(Xs[i]; k_i, v_i)``; Xs is (S, d_v, d_k') or one matrix."""
    _require_parts(spec)
    feats = features(spec, keys)
    _check_dims(spec, Xs, feats, values)
    if Xs.ndim == 2:
        preds = feats @ Xs.T
    else:
        preds = np.einsum("sij,sj->si", Xs, feats)
    if spec.variant == LossVariant.DELTA_NET:
        residual = preds - values
        data_term = 0.5 * np.sum(residual * residual, axis=-1)
    else:
        data_term = -np.sum(preds * values, axis=-1)
    return data_term + _regularizer(spec, Xs)


def predict(spec: LossSpec, X: MemoryMatrix, k: NDArray[np.float64]) -> NDArray[np.float64]:
    """Recalled value ``X @ phi(k)``."""
    return X @ features(spec, k)


def project(X: NDArray[np.float64], B: float) -> MemoryMatrix:
    """Radial projection onto the Frobenius ball of radius B/2."""
    if B <= 0:
        raise ConfigurationError(f"domain diameter B must be positive, got {B}")
    X = np.asarray(X, dtype=np.float64)
    if not np.all(np.isfinite(X)):
        raise NumericError("cannot project a matrix with non-finite entries")
    radius = 0.5 * B
    norm = float(np.linalg.norm(X))
    if norm <= radius * (1.0 + _RADIAL_TOL):
        return X
    return X * (radius / norm)


def weighted_cost(
    n: int,
    X: MemoryMatrix,
    batch: Mapping[int, KeyValuePair],
    weights: NDArray[np.float64],
    specs: Sequence[LossSpec],
) -> float:
    """Agent n's single-step cost: sum over m in W_n of w_{n,m} f_m(X)."""
    total = 0.0
    for m, w in enumerate(weights):
        if w <= 0:
            continue
        if m not in batch:
            raise DataError(f"agent {n} needs data of agent {m}, which is missing from the batch")
        total += float(w) * eval_loss(specs[m], X, batch[m])
    return total


def estimate_grad_bound(spec: LossSpec, keys: NDArray[np.float64], values: NDArray[np.float64], B: float) -> float:
    """Supremum of the gradient norm over the ball, maximized over a stream of samples."""
    feats = features(spec, keys)
    feat_norms = np.linalg.norm(feats, axis=-1)
    value_norms = np.linalg.norm(values, axis=-1)
    radius = 0.5 * B
    if spec.variant == LossVariant.DELTA_NET:
        per_sample = (radius * feat_norms + value_norms) * feat_norms
    else:
        per_sample = value_norms * feat_norms
    if spec.variant.gated or spec.variant == LossVariant.SOFTMAX_WITH_NORM:
        per_sample = per_sample + radius
    bound = float(np.max(per_sample)) if per_sample.size else 0.0
    # Assumption of a strictly positive bound.
    return max(bound, np.finfo(np.float64).tiny)
