from pathlib import Path

import numpy as np
import pytest

from ddam_sim.am_core import FeatureMapConfig, KVStream, LossSpec, LossVariant
from ddam_sim.topology import graph_from_edge_list, validate_weights

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def make_spec(variant: LossVariant, d_v: int = 3, feature_dim: int = 4, grad_bound: float | None = None) -> LossSpec:
    """A fully configured spec of any variant; gated variants keep the first row ungated."""
    gating = np.array([1.0] + [0.0] * (d_v - 1)) if variant.gated else None
    fmap = FeatureMapConfig(feature_dim, seed=3) if variant.uses_feature_map else None
    return LossSpec(variant, gating, fmap, grad_bound)


def random_stream(n_agents: int, T: int, d_k: int = 3, d_v: int = 3, seed: int = 0) -> KVStream:
    rng = np.random.default_rng(seed)
    return KVStream(rng.uniform(-1, 1, (n_agents, T, d_k)), rng.normal(size=(n_agents, T, d_v)))


@pytest.fixture
def small_stream() -> KVStream:
    return random_stream(3, 12)


@pytest.fixture
def path_graph():
    return graph_from_edge_list(3, [(0, 1), (1, 2)])


@pytest.fixture
def uniform_weights():
    return validate_weights(np.full((3, 3), 1.0 / 3.0))


@pytest.fixture
def config_dir() -> Path:
    return CONFIG_DIR


@pytest.fixture
def smoke_toml(tmp_path) -> Path:
    path = tmp_path / "smoke.toml"
    path.write_text(
        "\n".join(
            [
                "[scenario]",
                "n_agents = 3",
                "",
                "[graph]",
                'source = "edge_list"',
                "edges = [[0, 1], [1, 2]]",
                "",
                "[sweep]",
                "horizons = [8, 16]",
                "seeds = [0]",
                "",
            ]
        ),
        encoding="utf-8",
    )
    return path
