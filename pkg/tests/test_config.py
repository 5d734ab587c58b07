import pytest

from ddam_sim.am_core import LossVariant
from ddam_sim.config import (
    ExperimentConfig,
    Figure,
    ScenarioKind,
    apply_overrides,
    load_config,
    parse_override,
)
from ddam_sim.errors import ConfigurationError
from ddam_sim.protocols import Protocol
from ddam_sim.trees import DEFAULT_NODE_BUDGET

from tests.conftest import CONFIG_DIR


def write_toml(tmp_path, text, name="experiment.toml"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_defaults():
    cfg = ExperimentConfig()
    assert cfg.scenario.kind == ScenarioKind.SYNTHETIC
    assert cfg.scenario.n_agents == 20
    assert cfg.scenario.B == 60.0
    assert cfg.scenario.loss == LossVariant.DELTA_NET
    assert cfg.sweep.horizons == [250, 500, 1000, 1500, 2500]
    assert cfg.sweep.protocols == list(Protocol)
    assert cfg.learning_rate.mode == "corollary"
    assert cfg.output.figures == []
    assert cfg.graph.node_budget == DEFAULT_NODE_BUDGET == 20_000


def test_load_small_file(smoke_toml):
    cfg = load_config(smoke_toml)
    assert cfg.scenario.n_agents == 3
    assert cfg.graph.source == "edge_list"
    assert cfg.graph.edges == [(0, 1), (1, 2)]
    assert cfg.sweep.horizons == [8, 16]


@pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.toml")), ids=lambda p: p.stem)
def test_shipped_configs_validate(path):
    load_config(path)


def test_graph_include_is_merged():
    cfg = load_config(CONFIG_DIR / "synthetic_regret.toml")
    assert cfg.graph.source == "edge_list"
    assert len(cfg.graph.edges) == 30
    assert cfg.graph.include == "graph_fig2_approx.toml"
    assert cfg.output.figures == [Figure.FIG3_REGRET_VS_T]
    assert cfg.output.per_agent


def test_including_file_wins_over_the_include(tmp_path):
    write_toml(tmp_path, '[graph]\nsource = "edge_list"\nedges = [[0, 1]]\nnode_budget = 5\n', "g.toml")
    path = write_toml(tmp_path, '[scenario]\nn_agents = 2\n\n[graph]\ninclude = "g.toml"\nnode_budget = 7\n')
    cfg = load_config(path)
    assert cfg.graph.edges == [(0, 1)]
    assert cfg.graph.node_budget == 7


@pytest.mark.parametrize(
    ("item", "expected"),
    [
        ("sweep.seeds=1,2", (["sweep", "seeds"], [1, 2])),
        ("scenario.rho=0.5", (["scenario", "rho"], 0.5)),
        ("scenario.loss=linear_attention", (["scenario", "loss"], "linear_attention")),
        ('scenario.traffic_path="a,b.csv"', (["scenario", "traffic_path"], "a,b.csv")),
        ("sweep.horizons=[10, 20]", (["sweep", "horizons"], [10, 20])),
        ("output.per_agent=true", (["output", "per_agent"], True)),
    ],
)
def test_parse_override(item, expected):
    assert parse_override(item) == expected


@pytest.mark.parametrize("item", ["novalue", "=3"])
def test_malformed_overrides(item):
    with pytest.raises(ConfigurationError):
        parse_override(item)


def test_bare_keys_resolve_to_their_section():
    doc = apply_overrides({}, ["seeds=1,2", "n_agents=5", "p=0.5"])
    assert doc == {"sweep": {"seeds": [1, 2]}, "scenario": {"n_agents": 5}, "graph": {"p": 0.5}}


def test_single_values_are_wrapped_for_list_settings():
    assert apply_overrides({}, ["seeds=3"]) == {"sweep": {"seeds": [3]}}
    assert apply_overrides({}, ["sweep.protocols=OGD"]) == {"sweep": {"protocols": ["OGD"]}}


@pytest.mark.parametrize("item", ["rho=0.5", "source=identity", "bogus=1", "n_agents=1,2"])
def test_unresolvable_overrides(item):
    with pytest.raises(ConfigurationError):
        apply_overrides({}, [item])


def test_overrides_do_not_touch_the_input():
    doc = {"sweep": {"seeds": [0]}}
    apply_overrides(doc, ["seeds=4"])
    assert doc == {"sweep": {"seeds": [0]}}


def test_overrides_go_through_validation(smoke_toml):
    cfg = load_config(smoke_toml, ["seeds=1,2", "scenario.rho=0.25"])
    assert cfg.sweep.seeds == [1, 2]
    assert cfg.scenario.rho == 0.25
    with pytest.raises(ConfigurationError):
        load_config(smoke_toml, ["scenario.rho=2"])


def test_validation_errors_carry_the_line(tmp_path):
    path = write_toml(tmp_path, "[scenario]\nkind = \"synthetic\"\nn_agents = 0\n")
    with pytest.raises(ConfigurationError) as info:
        load_config(path)
    assert info.value.line == 3
    assert info.value.path == str(path)
    assert "scenario.n_agents" in str(info.value)


def test_unknown_keys_are_rejected_with_their_line(tmp_path):
    path = write_toml(tmp_path, "[scenario]\nn_agents = 3\nflavour = 1\n")
    with pytest.raises(ConfigurationError) as info:
        load_config(path)
    assert info.value.line == 3


def test_syntax_errors_carry_the_line(tmp_path):
    path = write_toml(tmp_path, "[scenario]\nn_agents = 3\nrho 0.5\n")
    with pytest.raises(ConfigurationError) as info:
        load_config(path)
    assert info.value.line == 3


def test_missing_file(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "absent.toml")


@pytest.mark.parametrize(
    "text",
    [
        '[scenario]\nloss = "gated_linear_attention"\n',
        '[scenario]\nloss = "softmax_no_norm"\n',
        '[scenario]\nloss = "softmax_with_norm"\nfeature_dim = 3\n',
        '[scenario]\nkind = "traffic"\n',
        "[scenario]\nn_agents = 2\n\n[weights]\nsource = \"matrix\"\nmatrix = [[1.0]]\n",
        "[weights]\ny0 = 5.0\ny1 = 1.0\n",
        "[weights]\ny0 = 0.0\ny1 = 0.0\n",
        "[sweep]\nhorizons = [10, 10]\n",
        "[sweep]\nhorizons = []\n",
        '[graph]\nsource = "edge_list"\n',
        '[graph]\nsource = "adjacency_csv"\n',
        '[graph]\nsource = "edge_list"\nedges = [[0, 1]]\ndelays = [1, 2]\n',
        '[learning_rate]\nmode = "fixed"\n',
        '[output]\nfigures = ["fig99"]\n',
    ],
)
def test_inconsistent_settings(tmp_path, text):
    with pytest.raises(ConfigurationError):
        load_config(write_toml(tmp_path, text))


def test_gated_and_feature_map_settings_validate(tmp_path):
    text = '[scenario]\nd_v = 2\nloss = "gated_softmax"\ngating = [1, 0]\nfeature_dim = 6\n'
    cfg = load_config(write_toml(tmp_path, text))
    assert cfg.scenario.gating == [1, 0]
    assert cfg.scenario.feature_dim == 6


def test_relative_traffic_path_resolves_against_the_file(tmp_path):
    path = write_toml(tmp_path, '[scenario]\nkind = "traffic"\ntraffic_path = "data/traffic.csv"\n')
    cfg = load_config(path)
    assert cfg.scenario.traffic_path == str((tmp_path / "data" / "traffic.csv").resolve())


def test_config_hash(smoke_toml):
    a = load_config(smoke_toml).config_hash()
    assert a == load_config(smoke_toml).config_hash()
    assert len(a) == 64
    assert a != load_config(smoke_toml, ["seeds=1"]).config_hash()
