"""Regret, comparators, path-length, retrieval error and bound series.

Every agent objective in this package is quadratic in the memory,

    F(U) = 1/2 tr(U S U^T) - <U, R> + 1/2 sum_i c_i ||U_i||^2 + const,

with S collecting the DeltaNet Gram terms, R the value/feature correlations of every
variant and c the gating or norm regularizer weights. Hindsight comparators therefore
solve a trust-region problem over the ball: the multiplier comes from the secular
equation, and a projected-gradient polish certifies the gradient-mapping tolerance.

Sums over agents run agent-major, time-minor.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
import pandas as pd
from numpy.typing import NDArray
from scipy.optimize import brentq

from ddam_sim.am_core import KVStream, LossSpec, LossVariant, MemoryMatrix, feature_dim, features, loss_series, project
from ddam_sim.bounds import BoundConstants, BoundKind, theoretical_bound
from ddam_sim.errors import AnalyticsError, ConfigurationError, OptimizationError
from ddam_sim.protocols import Trajectory
from ddam_sim.topology import LogicalWeights

logger = logging.getLogger(__name__)

GRAD_MAPPING_TOL = 1e-8
MAX_ITERATIONS = 100_000
NULL_SPACE_TOL = 1e-10


class ComparatorMode(str, Enum):
    STATIC = "static_hindsight"
    WINDOWED = "windowed"


@dataclass(frozen=True)
class ComparatorSequence:
    """U_{n,t} for t = 1..T stacked as (N, T, d_v, d_k')."""

    U: NDArray[np.float64]
    mode: ComparatorMode
    omega: int

    @property
    def horizon(self) -> int:
        return self.U.shape[1]


@dataclass
class RegretReport:
    protocol: str
    horizon: int
    steps_run: int
    seed: int
    static_regret: float
    dynamic_regret: float
    pl: float
    bound: float
    self_nmse: float
    cross_nmse: float
    c_max: int
    per_agent_dynamic: NDArray[np.float64]
    per_agent_pl: NDArray[np.float64]
    sweep: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def avg_regret(self) -> float:
        return self.static_regret / self.steps_run

    @property
    def avg_dynamic_regret(self) -> float:
        return self.dynamic_regret / self.steps_run

    @property
    def scaled_pl(self) -> float:
        return (1.0 + self.pl) / math.sqrt(self.steps_run)


def _as_array(x: Trajectory | ComparatorSequence | NDArray) -> NDArray[np.float64]:
    if isinstance(x, Trajectory):
        return x.X
    if isinstance(x, ComparatorSequence):
        return x.U
    return np.asarray(x, dtype=np.float64)


# ---------------------------------------------------------------------------
# hindsight comparators


@dataclass(frozen=True)
class _Quadratic:
    S: NDArray[np.float64]
    R: NDArray[np.float64]
    c: NDArray[np.float64]

    def grad(self, U: MemoryMatrix) -> MemoryMatrix:
        return U @ self.S - self.R + self.c[:, None] * U

    @property
    def lipschitz(self) -> float:
        top = float(np.linalg.eigvalsh(self.S)[-1]) if self.S.size else 0.0
        return max(top, 0.0) + float(np.max(self.c))


def _quadratic(
    n: int,
    stream: KVStream,
    W: LogicalWeights,
    specs: Sequence[LossSpec],
    start: int,
    stop: int,
) -> _Quadratic:
    dk = feature_dim(specs[n], stream.d_k)
    dv = stream.d_v
    S = np.zeros((dk, dk))
    R = np.zeros((dv, dk))
    c = np.zeros(dv)
    for m in W.support(n):
        w = W.W[n, m]
        spec = specs[m]
        feats = features(spec, stream.keys[m, start - 1 : stop])
        if feats.shape[-1] != dk:
            raise ConfigurationError(f"agents {n} and {m} use feature dimensions {dk} and {feats.shape[-1]}")
        vals = stream.values[m, start - 1 : stop]
        count = feats.shape[0]
        R += w * (vals.T @ feats)
        if spec.variant == LossVariant.DELTA_NET:
            S += w * (feats.T @ feats)
        if spec.variant.gated:
            c += w * count * (1.0 - spec.gating)
        elif spec.variant == LossVariant.SOFTMAX_WITH_NORM:
            c += w * count
    return _Quadratic(S, R, c)


def _secular_solution(q: _Quadratic, radius: float) -> MemoryMatrix:
    """Minimizer of the quadratic over the ball via the trust-region multiplier."""
    lam, Q = np.linalg.eigh(q.S)
    lam_tol = max(float(lam[-1]), 0.0) * lam.size * np.finfo(float).eps if lam.size else 0.0
    lam = np.where(lam <= lam_tol, 0.0, lam)
    RQ = q.R @ Q
    denom_base = lam[None, :] + q.c[:, None]
    # round-off in flat directions of rank-deficient windows is dropped: the minimum-norm minimizer is returned
    flat = (denom_base == 0.0) & (np.abs(RQ) <= NULL_SPACE_TOL * float(np.linalg.norm(q.R)))
    RQ = np.where(flat, 0.0, RQ)

    def solve(mult: float) -> MemoryMatrix:
        with np.errstate(divide="ignore", invalid="ignore"):
            coeffs = np.where(RQ == 0.0, 0.0, RQ / (denom_base + mult))
        return coeffs @ Q.T

    def inv_norm_gap(mult: float) -> float:
        with np.errstate(divide="ignore", invalid="ignore"):
            coeffs = np.where(RQ == 0.0, 0.0, RQ / (denom_base + mult))
        norm = float(np.linalg.norm(coeffs))
        return (1.0 / norm if norm > 0 else math.inf) - 1.0 / radius

    if inv_norm_gap(0.0) >= 0.0:
        return solve(0.0)
    hi = max(float(np.linalg.norm(q.R)) / radius, 1e-300)
    while inv_norm_gap(hi) < 0.0:
        hi *= 2.0
    mult = brentq(inv_norm_gap, 0.0, hi, xtol=1e-15 * hi, rtol=4 * np.finfo(float).eps, maxiter=500)
    return solve(mult)


def _pgd_polish(q: _Quadratic, U: MemoryMatrix, B: float, tol: float, max_iter: int) -> MemoryMatrix:
    radius = 0.5 * B
    scale = max(1.0, float(np.linalg.norm(q.R)))
    L = max(q.lipschitz, float(np.linalg.norm(q.R)) / radius, 1e-12)
    mapping = math.inf
    for _ in range(max_iter + 1):
        nxt = project(U - q.grad(U) / L, B)
        mapping = L * float(np.linalg.norm(U - nxt))
        if mapping <= tol * scale:
            return U
        U = nxt
    raise OptimizationError(
        f"hindsight solver stopped after {max_iter} iterations with gradient mapping {mapping:.3e}",
        grad_norm=mapping,
    )


def hindsight_optimum(
    n: int,
    stream: KVStream,
    W: LogicalWeights,
    specs: Sequence[LossSpec],
    B: float,
    window: tuple[int, int] | None = None,
    tol: float = GRAD_MAPPING_TOL,
    max_iter: int = MAX_ITERATIONS,
) -> MemoryMatrix:
    """argmin over the ball of sum_{s in window} sum_m w_{n,m} f_{m,s}(U).

    ``window`` is an inclusive 1-based step range; the default is the whole stream.
    """
    start, stop = window if window is not None else (1, stream.horizon)
    if not 1 <= start <= stop <= stream.horizon:
        raise AnalyticsError(f"window {start}..{stop} outside 1..{stream.horizon}")
    q = _quadratic(n, stream, W, specs, start, stop)
    U = project(_secular_solution(q, 0.5 * B), B)
    return _pgd_polish(q, U, B, tol, max_iter)


def hindsight_objective(
    U: MemoryMatrix,
    n: int,
    stream: KVStream,
    W: LogicalWeights,
    specs: Sequence[LossSpec],
    window: tuple[int, int] | None = None,
) -> float:
    start, stop = window if window is not None else (1, stream.horizon)
    total = 0.0
    for m in W.support(n):
        keys = stream.keys[m, start - 1 : stop]
        values = stream.values[m, start - 1 : stop]
        total += W.W[n, m] * float(np.sum(loss_series(specs[m], U, keys, values)))
    return total


def static_comparator(
    stream: KVStream,
    W: LogicalWeights,
    specs: Sequence[LossSpec],
    B: float,
    T: int | None = None,
) -> ComparatorSequence:
    T = stream.horizon if T is None else T
    return windowed_comparators(stream, W, specs, B, T, T)


def windowed_comparators(
    stream: KVStream,
    W: LogicalWeights,
    specs: Sequence[LossSpec],
    B: float,
    T: int,
    omega: int,
) -> ComparatorSequence:
    """Per-window hindsight optima over Theta_k = {(k-1) omega + 1, .., k omega}."""
    if omega < 1:
        raise ConfigurationError(f"window length must be positive, got {omega}")
    if T > stream.horizon:
        raise AnalyticsError(f"comparators for {T} steps requested from a {stream.horizon}-step stream")
    N = W.n_agents
    dk = feature_dim(specs[0], stream.d_k)
    U = np.empty((N, T, stream.d_v, dk))
    for start in range(1, T + 1, omega):
        stop = min(start + omega - 1, T)
        for n in range(N):
            U[n, start - 1 : stop] = hindsight_optimum(n, stream, W, specs, B, (start, stop))
    mode = ComparatorMode.STATIC if omega >= T else ComparatorMode.WINDOWED
    return ComparatorSequence(U, mode, min(omega, T))


# ---------------------------------------------------------------------------
# regret and path-length


def agent_losses(
    X: Trajectory | ComparatorSequence | NDArray,
    stream: KVStream,
    W: LogicalWeights,
    specs: Sequence[LossSpec],
) -> NDArray[np.float64]:
    """(N, T) array of sum_m w_{n,m} f_{m,t}(X_{n,t})."""
    X = _as_array(X)
    N, T = X.shape[:2]
    if T > stream.horizon:
        raise AnalyticsError(f"sequence of {T} steps exceeds the {stream.horizon}-step stream")
    out = np.zeros((N, T))
    for n in range(N):
        for m in W.support(n):
            out[n] += W.W[n, m] * loss_series(specs[m], X[n], stream.keys[m, :T], stream.values[m, :T])
    return out


def regret_per_agent(
    traj: Trajectory | NDArray,
    stream: KVStream,
    W: LogicalWeights,
    specs: Sequence[LossSpec],
    U_seq: ComparatorSequence | NDArray,
) -> NDArray[np.float64]:
    X = _as_array(traj)
    U = _as_array(U_seq)
    if X.shape != U.shape:
        raise AnalyticsError(f"trajectory {X.shape} and comparator {U.shape} differ in shape")
    gap = agent_losses(X, stream, W, specs) - agent_losses(U, stream, W, specs)
    return np.array([float(np.sum(row)) for row in gap])


def dynamic_regret(
    traj: Trajectory | NDArray,
    stream: KVStream,
    W: LogicalWeights,
    specs: Sequence[LossSpec],
    U_seq: ComparatorSequence | NDArray,
) -> float:
    total = 0.0
    for value in regret_per_agent(traj, stream, W, specs, U_seq):
        total += float(value)
    return total


def static_regret(
    traj: Trajectory | NDArray,
    stream: KVStream,
    W: LogicalWeights,
    specs: Sequence[LossSpec],
    U_star: NDArray[np.float64],
) -> float:
    """Regret against one fixed memory per agent; U_star is (N, d_v, d_k')."""
    X = _as_array(traj)
    U_star = np.asarray(U_star, dtype=np.float64)
    if U_star.ndim != 3 or U_star.shape[0] != X.shape[0]:
        raise AnalyticsError(f"static comparator of shape {U_star.shape} does not match {X.shape}")
    U_seq = np.broadcast_to(U_star[:, None], X.shape)
    return dynamic_regret(X, stream, W, specs, U_seq)


def path_length(U_seq: ComparatorSequence | NDArray) -> NDArray[np.float64]:
    """Per-agent sum over t >= 2 of ||U_{t-1} - U_t||_F."""
    U = _as_array(U_seq)
    if U.shape[1] < 1:
        raise AnalyticsError("path-length of an empty sequence")
    steps = np.diff(U, axis=1)
    return np.linalg.norm(steps, axis=(2, 3)).sum(axis=1)


# ---------------------------------------------------------------------------
# retrieval error


def nmse(
    traj: Trajectory | NDArray,
    stream: KVStream,
    W: LogicalWeights,
    specs: Sequence[LossSpec],
    final: bool = False,
) -> tuple[float, float]:
    """(self, cross) normalized retrieval errors.

    By default agent n recalls step t with its iterate X_{n,t}; ``final`` uses the last
    iterate for every step. Cross-NMSE is NaN when no agent has a remote interest.
    """
    X = _as_array(traj)
    N, T = X.shape[:2]
    self_num = self_den = cross_num = cross_den = 0.0
    for n in range(N):
        mem = np.broadcast_to(X[n, -1], X[n].shape) if final else X[n]
        for m in (n, *W.remote_support(n)):
            feats = features(specs[n], stream.keys[m, :T])
            vals = stream.values[m, :T]
            err = np.einsum("tij,tj->ti", mem, feats) - vals
            num, den = float(np.sum(err * err)), float(np.sum(vals * vals))
            if m == n:
                self_num, self_den = self_num + num, self_den + den
            else:
                cross_num, cross_den = cross_num + num, cross_den + den
    if self_den == 0.0:
        raise AnalyticsError("all values are zero; NMSE is undefined")
    has_cross = any(W.remote_support(n) for n in range(N))
    if has_cross and cross_den == 0.0:
        raise AnalyticsError("all remote values are zero; cross-NMSE is undefined")
    cross = cross_num / cross_den if has_cross else math.nan
    return self_num / self_den, cross


# ---------------------------------------------------------------------------
# bound series


def bound_trajectory(
    kind: BoundKind | str,
    constants: BoundConstants,
    horizons: Sequence[int],
    pl: Sequence[float | NDArray],
    eta: Sequence[float | NDArray] | None = None,
) -> pd.DataFrame:
    """Closed-form bound and scaled path-length (1 + PL)/sqrt(T) at each horizon.

    ``pl[i]`` is the per-agent path-length at ``horizons[i]`` (a scalar broadcasts); the
    scaled column uses the network total.
    """
    horizons = [int(h) for h in horizons]
    if len(pl) != len(horizons):
        raise AnalyticsError(f"{len(horizons)} horizons but {len(pl)} path-length entries")
    if any(b <= a for a, b in zip(horizons, horizons[1:])):
        raise AnalyticsError("horizons must be strictly increasing")
    rows = []
    for i, T in enumerate(horizons):
        agent_pl = np.broadcast_to(np.asarray(pl[i], dtype=np.float64), (constants.n_agents,))
        rate = None if eta is None else eta[i]
        bound = theoretical_bound(kind, constants, T, PL=agent_pl, eta=rate)
        rows.append({"horizon": T, "bound": bound, "scaled_pl": (1.0 + float(agent_pl.sum())) / math.sqrt(T)})
    return pd.DataFrame(rows, columns=["horizon", "bound", "scaled_pl"])
