"""Learning-rate schedules, regret-bound constants and closed-form regret bounds."""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

import numpy as np
from numpy.typing import NDArray

from ddam_sim.am_core import LossSpec
from ddam_sim.errors import ConfigurationError
from ddam_sim.topology import DelaySummary, LogicalWeights


class BoundKind(str, Enum):
    OGD_DYNAMIC = "ogd_dynamic"
    OGD_STATIC = "ogd_static"
    CDOGD_STATIC = "cdogd_static"
    TOGD_DYNAMIC = "togd_dynamic"
    TOGD_STATIC = "togd_static"
    TOGD_THEOREM = "togd_theorem"


def _positive(name: str, value: float) -> None:
    if not (math.isfinite(value) and value > 0):
        raise ConfigurationError(f"{name} must be positive, got {value}")


def _nonnegative(name: str, value: float) -> None:
    if not (math.isfinite(value) and value >= 0):
        raise ConfigurationError(f"{name} must be nonnegative, got {value}")


def lr_ogd(B: float, G_bar: float, T: int) -> float:
    """eta_n = B sqrt(7) / (G_bar sqrt(2T))."""
    _positive("B", B)
    _positive("G_bar", G_bar)
    _positive("T", T)
    return B * math.sqrt(7) / (G_bar * math.sqrt(2 * T))


def lr_cdogd(T: int) -> float:
    """eta_n = 1 / (2 sqrt(T))."""
    _positive("T", T)
    return 1.0 / (2.0 * math.sqrt(T))


def lr_togd(B: float, Q: float, J: float, delta_tau: float, T: int) -> float:
    """eta_n = sqrt(7 B^2 / (4 (Q (T + delta_tau) + J)))."""
    _positive("B", B)
    _positive("Q", Q)
    _positive("T", T)
    _nonnegative("J", J)
    _nonnegative("delta_tau", delta_tau)
    return math.sqrt(7 * B * B / (4 * (Q * (T + delta_tau) + J)))


@dataclass(frozen=True)
class BoundConstants:
    """Per-agent constants of the delayed-OGD regret bound, plus the inputs they came from."""

    K: NDArray[np.float64]
    Q: NDArray[np.float64]
    J: NDArray[np.float64]
    H: NDArray[np.float64]
    C: NDArray[np.float64]
    G_bar: NDArray[np.float64]
    G: NDArray[np.float64]
    support_size: NDArray[np.int64]
    tau_sum: NDArray[np.int64]
    tau_max: NDArray[np.int64]
    delta_tau: NDArray[np.int64]
    B: float

    @property
    def n_agents(self) -> int:
        return self.K.shape[0]


def bound_constants(
    W: LogicalWeights,
    specs: Sequence[LossSpec],
    summaries: Mapping[int, DelaySummary],
    B: float,
) -> BoundConstants:
    """Evaluate K, Q, J, H, C and G_bar for every agent."""
    N = W.n_agents
    G = np.array([s.grad_bound if s.grad_bound is not None else np.nan for s in specs], dtype=np.float64)
    if np.any(np.isnan(G)):
        missing = [n for n in range(N) if np.isnan(G[n])]
        raise ConfigurationError(f"gradient bounds unset for agents {missing}")
    K, Q, J, H, C, G_bar = (np.zeros(N) for _ in range(6))
    support_size = np.zeros(N, dtype=np.int64)
    tau_sum, tau_max, delta_tau = (np.zeros(N, dtype=np.int64) for _ in range(3))
    for n in range(N):
        support = list(W.support(n))
        w = W.W[n, support]
        G_sup = G[support]
        s = summaries.get(n, DelaySummary(0, 0, 0, 0))
        size = len(support)
        K[n] = float(np.max(w * G_sup))
        Q[n] = 0.5 * K[n] * float(np.sum(G_sup)) + size * K[n] ** 2 * s.tau_sum
        J[n] = size**2 * K[n] ** 2 * s.tau_max**2
        H[n] = K[n] * s.tau_sum
        C[n] = K[n] * s.delta_tau * size * B
        G_bar[n] = float(np.sum(w * G_sup))
        support_size[n] = size
        tau_sum[n], tau_max[n], delta_tau[n] = s.tau_sum, s.tau_max, s.delta_tau
    return BoundConstants(K, Q, J, H, C, G_bar, G, support_size, tau_sum, tau_max, delta_tau, float(B))


def _per_agent(value: float | Sequence[float] | NDArray, n: int, name: str) -> NDArray[np.float64]:
    arr = np.broadcast_to(np.asarray(value, dtype=np.float64), (n,)).copy()
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise ConfigurationError(f"{name} must be finite and nonnegative")
    return arr


def theoretical_bound(
    kind: BoundKind | str,
    constants: BoundConstants,
    T: int,
    PL: float | Sequence[float] | NDArray = 0.0,
    alpha: float | None = None,
    eta: float | Sequence[float] | NDArray | None = None,
) -> float:
    """Closed-form network regret bound of the given kind at horizon T.

    ``PL`` is the per-agent comparator path-length (a scalar broadcasts). ``eta`` is only
    read by the OGD and theorem kinds; when omitted the OGD bound uses its tuned rate.
    Only the theorem kind carries the tail constant C_n; the tuned delayed kinds do not.
    """
    kind = BoundKind(kind)
    _positive("T", T)
    c = constants
    N = c.n_agents
    pl = _per_agent(PL, N, "path-length")
    B = c.B

    if kind in (BoundKind.OGD_DYNAMIC, BoundKind.OGD_STATIC):
        if kind == BoundKind.OGD_STATIC:
            pl = np.zeros(N)
        if eta is None:
            root_t = math.sqrt(T)
            terms = math.sqrt(3.5) * B * c.G_bar * root_t + math.sqrt(2 / 7) * c.G_bar * pl * root_t
            return float(np.sum(terms))
        rates = _per_agent(eta, N, "eta")
        if np.any(rates <= 0):
            raise ConfigurationError("eta must be positive")
        terms = 7 * B * B / (4 * rates) + rates * T * c.G_bar**2 / 2 + B / rates * pl
        return float(np.sum(terms))

    if kind == BoundKind.CDOGD_STATIC:
        if alpha is None:
            raise ConfigurationError("cdogd_static needs the mixing contraction alpha")
        if not 0 <= alpha < 1:
            raise ConfigurationError(f"alpha must lie in [0, 1), got {alpha}")
        g_max = float(np.max(c.G))
        return N * (B + (5 - alpha) / (1 - alpha) * g_max**2) * math.sqrt(T)

    S = c.Q * (T + c.delta_tau) + c.J
    if kind == BoundKind.TOGD_THEOREM:
        if eta is None:
            raise ConfigurationError("togd_theorem needs the per-agent learning rates")
        rates = _per_agent(eta, N, "eta")
        if np.any(rates <= 0):
            raise ConfigurationError("eta must be positive")
        terms = S * rates + 7 * B * B / (4 * rates) + (B / rates + c.H) * pl + c.C
        return float(np.sum(terms))

    if kind == BoundKind.TOGD_STATIC:
        pl = np.zeros(N)
    root_s = np.sqrt(S)
    terms = math.sqrt(7) * B * root_s + (c.H + 2 / math.sqrt(7) * root_s) * pl
    return float(np.sum(terms))
