import math
from concurrent.futures import Future
from concurrent.futures.process import BrokenProcessPool

import numpy as np
import pytest

from ddam_sim import harness
from ddam_sim.config import load_config
from ddam_sim.errors import ConfigurationError, SweepPointError, WorkerCrashError
from ddam_sim.harness import (
    WorldPoint,
    build_world,
    effective_capacity,
    report_key,
    run_experiment,
    togd_steps,
    tree_report,
    world_points,
)
from ddam_sim.protocols import Protocol
from ddam_sim.topology import CDOGD_CAPACITY


def by_protocol(reports):
    out = {}
    for r in reports:
        out.setdefault(r.protocol, []).append(r)
    return out


@pytest.mark.parametrize(("T", "c_max", "steps"), [(10, 3, 3), (10, 0, 10), (10, 1, 10), (16, 8, 2)])
def test_togd_steps(T, c_max, steps):
    assert togd_steps(T, c_max) == steps


def test_horizon_shorter_than_the_capacity():
    with pytest.raises(ConfigurationError):
        togd_steps(4, 8)
    assert effective_capacity(0) == 1


def test_world_points_cross_the_sweep_axes(smoke_toml):
    cfg = load_config(smoke_toml, ["seeds=0,1", "sweep.rho=0.2,0.8"])
    assert world_points(cfg) == [
        WorldPoint(0, 0.2, 2.0),
        WorldPoint(0, 0.8, 2.0),
        WorldPoint(1, 0.2, 2.0),
        WorldPoint(1, 0.8, 2.0),
    ]
    assert world_points(load_config(smoke_toml)) == [WorldPoint(0, 0.75, 2.0)]


def test_world_is_built_from_the_config(smoke_toml):
    cfg = load_config(smoke_toml)
    world = build_world(cfg, world_points(cfg)[0])
    assert world.stream.horizon == 16
    assert world.W.n_agents == 3
    assert world.graph.edges == ((0, 1), (1, 2))
    assert world.grad_bound_estimated
    assert all(s.grad_bound > 0 for s in world.specs)
    assert set(world.designs) == {Protocol.TOGD_STEINER, Protocol.TOGD_STAR}
    # every agent reaches both others over the middle node
    assert world.designs[Protocol.TOGD_STAR].c_max == 8


def test_one_row_per_protocol_and_horizon(smoke_toml):
    reports = run_experiment(load_config(smoke_toml), workers=1)
    assert len(reports) == 8
    assert len({report_key(r) for r in reports}) == 8
    assert [r.protocol for r in reports[::2]] == [p.value for p in Protocol]
    assert [report_key(r) for r in reports] == sorted(report_key(r) for r in reports)


def test_horizon_fairness(smoke_toml):
    reports = by_protocol(run_experiment(load_config(smoke_toml), workers=1))
    for r in reports["OGD"]:
        assert r.steps_run == r.horizon
        assert r.c_max == 0
    for r in reports["CDOGD"]:
        assert r.steps_run == r.horizon
        assert r.c_max == CDOGD_CAPACITY
        assert r.metadata["alpha"] < 1.0
    for name in ("TOGD_Steiner", "TOGD_Star"):
        for r in reports[name]:
            assert r.steps_run == r.horizon // max(r.c_max, 1)
            assert r.steps_run * max(r.c_max, 1) <= r.horizon
            assert r.metadata["messages"] > 0


def test_local_weights_keep_the_full_horizon(smoke_toml):
    reports = run_experiment(load_config(smoke_toml, ["weights.source=identity"]), workers=1)
    for r in reports:
        if r.protocol.startswith("TOGD"):
            assert r.c_max == 0
            assert r.steps_run == r.horizon
            assert r.metadata["messages"] == 0
        assert math.isnan(r.cross_nmse)


def test_report_fields(smoke_toml):
    reports = run_experiment(load_config(smoke_toml), workers=1)
    for r in reports:
        assert r.per_agent_dynamic.shape == (3,)
        assert r.dynamic_regret == pytest.approx(float(np.sum(r.per_agent_dynamic)))
        assert r.sweep["omega"] == r.steps_run
        assert r.pl == 0.0
        assert r.static_regret == pytest.approx(r.dynamic_regret)
        assert r.self_nmse >= 0
        assert np.isfinite(r.bound)
        assert r.metadata["prng"] == "numpy.random.PCG64"


def test_windows_are_deduplicated(smoke_toml):
    cfg = load_config(smoke_toml, ["sweep.omega=1,100", "sweep.protocols=OGD,TOGD_Star"])
    reports = by_protocol(run_experiment(cfg, workers=1))
    ogd_windows = [(r.horizon, r.sweep["omega"]) for r in reports["OGD"]]
    assert ogd_windows == [(8, 1), (8, 8), (16, 1), (16, 16)]
    # TOGD_Star runs a single step at T = 8, so both windows collapse onto it
    togd_windows = [(r.horizon, r.sweep["omega"]) for r in reports["TOGD_Star"]]
    assert togd_windows == [(8, 1), (16, 1), (16, 2)]
    for r in reports["OGD"]:
        if r.sweep["omega"] == 1:
            assert r.pl >= 0
            assert r.dynamic_regret >= r.static_regret - 1e-8


def test_runs_are_deterministic(smoke_toml):
    cfg = load_config(smoke_toml, ["seeds=0,1"])
    a = run_experiment(cfg, workers=1)
    b = run_experiment(cfg, workers=1)
    assert [(r.static_regret, r.dynamic_regret, r.self_nmse) for r in a] == [
        (r.static_regret, r.dynamic_regret, r.self_nmse) for r in b
    ]


def test_process_pool_matches_serial_run(smoke_toml):
    cfg = load_config(smoke_toml, ["seeds=0,1"])
    serial = run_experiment(cfg, workers=1)
    pooled = run_experiment(cfg, workers=2)
    assert [report_key(r) for r in pooled] == [report_key(r) for r in serial]
    assert [r.static_regret for r in pooled] == [r.static_regret for r in serial]


def test_progress_callback_sees_every_row(smoke_toml):
    seen = []
    reports = run_experiment(load_config(smoke_toml), workers=1, progress=seen.append)
    assert len(seen) == len(reports)
    assert all(a is b for a, b in zip(seen, reports))


def test_failures_name_their_sweep_point(smoke_toml):
    cfg = load_config(smoke_toml, ["horizons=4", "seeds=3"])
    with pytest.raises(SweepPointError) as info:
        run_experiment(cfg, workers=1)
    assert info.value.coordinates == {"seed": 3, "rho": 0.75, "y0": 2.0}
    assert isinstance(info.value.cause, ConfigurationError)


def test_fixed_learning_rate(smoke_toml):
    cfg = load_config(smoke_toml, ['learning_rate.mode="fixed"', "learning_rate.value=0.05"])
    reports = run_experiment(cfg, workers=1)
    assert all(r.metadata["eta_mean"] == 0.05 for r in reports)


def test_given_gradient_bound_is_used(smoke_toml):
    cfg = load_config(smoke_toml, ["scenario.grad_bound=50"])
    world = build_world(cfg, world_points(cfg)[0])
    assert not world.grad_bound_estimated
    assert [s.grad_bound for s in world.specs] == [50.0, 50.0, 50.0]


def test_periodic_traffic_scenario(tmp_path):
    path = tmp_path / "traffic.toml"
    path.write_text(
        "\n".join(
            [
                "[scenario]",
                'kind = "periodic_traffic"',
                "n_agents = 2",
                "days = 1",
                "",
                "[graph]",
                'source = "edge_list"',
                "edges = [[0, 1]]",
                "",
                "[sweep]",
                "horizons = [10]",
                "omega = [1, 5]",
                'protocols = ["OGD"]',
                "",
            ]
        ),
        encoding="utf-8",
    )
    cfg = load_config(path)
    world = build_world(cfg, world_points(cfg)[0])
    assert world.stream.keys.shape == (2, 10, 34)
    reports = run_experiment(cfg, workers=1)
    assert [r.sweep["omega"] for r in reports] == [1, 5]
    assert all(r.pl > 0 for r in reports)


def test_traffic_shorter_than_the_horizon(tmp_path):
    path = tmp_path / "traffic.toml"
    path.write_text(
        '[scenario]\nkind = "periodic_traffic"\nn_agents = 2\ndays = 1\n\n[sweep]\nhorizons = [30]\n',
        encoding="utf-8",
    )
    cfg = load_config(path)
    with pytest.raises(SweepPointError):
        run_experiment(cfg, workers=1)


def test_tree_report(smoke_toml):
    frame, capacity = tree_report(load_config(smoke_toml))
    assert list(frame.columns) == ["agent", "method", "edges", "tau_sum", "tau_max", "delta_tau", "dist"]
    assert len(frame) == 6
    assert set(frame["method"]) == {"steiner", "sumdelay"}
    # a path graph leaves a single spanning tree
    assert set(frame["edges"]) == {"0-1 1-2"}
    assert capacity == {"steiner": 8, "sumdelay": 8}


def test_pooled_failures_name_their_sweep_point(smoke_toml):
    cfg = load_config(smoke_toml, ["horizons=4", "seeds=3,4"])
    with pytest.raises(SweepPointError) as info:
        run_experiment(cfg, workers=2)
    assert info.value.coordinates == {"seed": 3, "rho": 0.75, "y0": 2.0}
    assert isinstance(info.value.cause, ConfigurationError)


class BrokenPool:
    def __init__(self, max_workers):
        self.max_workers = max_workers

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False

    def submit(self, fn, *args):
        future = Future()
        future.set_exception(BrokenProcessPool("a worker died"))
        return future


def test_crashed_workers_become_simulator_errors(smoke_toml, monkeypatch):
    monkeypatch.setattr(harness, "ProcessPoolExecutor", BrokenPool)
    cfg = load_config(smoke_toml, ["seeds=5,6"])
    with pytest.raises(WorkerCrashError) as info:
        run_experiment(cfg, workers=2)
    assert info.value.coordinates == {"seed": 5, "rho": 0.75, "y0": 2.0}
    assert "BrokenProcessPool" in str(info.value)
