"""Synthetic key/value streams and Dirichlet logical weights.

Agent n observes ``v = ((1 - rho) M_n + rho M_com) k + noise`` with keys drawn uniformly
from [-1, 1]. Every draw comes from a numpy ``Generator`` seeded through a
``SeedSequence`` spawned per concern, so ground truth, streams and weights are independent
and each is a pure function of the seed.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from numpy.typing import NDArray

from ddam_sim.am_core import KVStream
from ddam_sim.errors import ConfigurationError, DataError
from ddam_sim.topology import LogicalWeights, validate_weights

logger = logging.getLogger(__name__)

PRNG_NAME = "numpy.random.PCG64"

_GROUND_TRUTH, _STREAM, _WEIGHTS = range(3)


@dataclass(frozen=True)
class SyntheticConfig:
    n_agents: int = 20
    d_k: int = 4
    d_v: int = 4
    rho: float = 0.75
    noise_var: float = 1.0
    seed: int = 0
    y0: float = 2.0
    y1: float = 10.0

    def __post_init__(self):
        if min(self.n_agents, self.d_k, self.d_v) < 1:
            raise ConfigurationError("n_agents, d_k and d_v must be positive")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigurationError(f"rho must lie in [0, 1], got {self.rho}")
        if self.noise_var < 0:
            raise ConfigurationError(f"noise_var must be nonnegative, got {self.noise_var}")
        if self.seed < 0:
            raise ConfigurationError(f"seed must be unsigned, got {self.seed}")
        if not self.y1 >= self.y0 >= 0:
            raise ConfigurationError(f"Dirichlet parameters need y1 >= y0 >= 0, got y0={self.y0}, y1={self.y1}")


@dataclass(frozen=True)
class GroundTruth:
    M_com: NDArray[np.float64]
    M: NDArray[np.float64]  # (N, d_v, d_k)
    mu: NDArray[np.float64]
    sigma2: NDArray[np.float64]

    def mechanism(self, rho: float) -> NDArray[np.float64]:
        """Per-agent optimal linear map (1 - rho) M_n + rho M_com."""
        return (1.0 - rho) * self.M + rho * self.M_com


def _rng(seed: int, concern: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed).spawn(3)[concern])


def gen_ground_truth(cfg: SyntheticConfig) -> GroundTruth:
    rng = _rng(cfg.seed, _GROUND_TRUTH)
    N, dv, dk = cfg.n_agents, cfg.d_v, cfg.d_k
    # chi-squared with 2 degrees of freedom
    M_com = -2.0 * np.log1p(-rng.random((dv, dk)))
    mu = rng.uniform(-5.0, 5.0, N)
    sigma2 = rng.uniform(0.0, 50.0, N)
    M = mu[:, None, None] + np.sqrt(sigma2)[:, None, None] * rng.standard_normal((N, dv, dk))
    return GroundTruth(M_com, M, mu, sigma2)


def gen_stream(cfg: SyntheticConfig, gt: GroundTruth, T: int, drift: float | None = None) -> KVStream:
    """T key/value pairs per agent.

    With ``drift`` set, the ground-truth mechanism changes sign after step
    ``floor(drift * T)``.
    """
    if T < 1:
        raise DataError(f"stream length must be at least 1, got {T}")
    if drift is not None and not 0.0 < drift <= 1.0:
        raise ConfigurationError(f"drift point must lie in (0, 1], got {drift}")
    rng = _rng(cfg.seed, _STREAM)
    N = cfg.n_agents
    keys = rng.uniform(-1.0, 1.0, (N, T, cfg.d_k))
    noise = np.sqrt(cfg.noise_var) * rng.standard_normal((N, T, cfg.d_v))
    mech = gt.mechanism(cfg.rho)
    values = np.einsum("nij,ntj->nti", mech, keys)
    if drift is not None:
        flip = int(np.floor(drift * T))
        values[:, flip:] = -values[:, flip:]
    values = values + noise
    metadata = {"prng": PRNG_NAME, "seed": cfg.seed, "rho": cfg.rho, "noise_var": cfg.noise_var}
    if drift is not None:
        metadata["drift"] = drift
    return KVStream(keys, values, metadata)


def gen_weights(cfg: SyntheticConfig) -> LogicalWeights:
    """Rows drawn from Dirichlet(y0, .., y1, .., y0) with y1 on the diagonal."""
    if cfg.y0 == 0 and cfg.y1 == 0:
        raise ConfigurationError("Dirichlet parameters y0 and y1 cannot both be zero")
    rng = _rng(cfg.seed, _WEIGHTS)
    N = cfg.n_agents
    W = np.zeros((N, N))
    for n in range(N):
        shape = np.full(N, cfg.y0)
        shape[n] = cfg.y1
        row = np.zeros(N)
        active = shape > 0
        row[active] = rng.gamma(shape[active], 1.0)
        total = row.sum()
        if total <= 0:
            # every gamma draw underflowed; fall back to the most concentrated component
            row[np.argmax(shape)] = 1.0
            total = 1.0
        W[n] = row / total
    return validate_weights(W)


def export_stream_csv(stream: KVStream, path: str | Path) -> Path:
    """Long-format CSV with columns agent, t, k0.., v0.."""
    N, T = stream.n_agents, stream.horizon
    frame = pd.DataFrame(
        {
            "agent": np.repeat(np.arange(N), T),
            "t": np.tile(np.arange(1, T + 1), N),
        }
    )
    keys = stream.keys.reshape(N * T, stream.d_k)
    values = stream.values.reshape(N * T, stream.d_v)
    for i in range(stream.d_k):
        frame[f"k{i}"] = keys[:, i]
    for i in range(stream.d_v):
        frame[f"v{i}"] = values[:, i]
    path = Path(path)
    frame.to_csv(path, index=False, float_format="%.17g")
    logger.info("wrote %s rows of stream data to %s", len(frame), path)
    return path


def read_stream_csv(path: str | Path) -> KVStream:
    frame = pd.read_csv(path, float_precision="round_trip").sort_values(["agent", "t"], kind="stable")
    N = int(frame["agent"].max()) + 1
    T = int(frame["t"].max())
    if len(frame) != N * T:
        raise DataError(f"{path}: expected {N * T} rows for {N} agents and {T} steps, found {len(frame)}")
    kcols = [c for c in frame.columns if c.startswith("k")]
    vcols = [c for c in frame.columns if c.startswith("v")]
    keys = frame[kcols].to_numpy(dtype=np.float64).reshape(N, T, len(kcols))
    values = frame[vcols].to_numpy(dtype=np.float64).reshape(N, T, len(vcols))
    return KVStream(keys, values, {"source": str(path)})
