"""Experiment orchestration: build each scenario, run every protocol, measure every horizon.

A *world* is one (seed, rho, y0) point: its stream, logical weights, physical graph,
routing trees and bound constants. Worlds are independent, so they may run in a process
pool; the resulting report rows are put in canonical order afterwards.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import pandas as pd

from ddam_sim import analytics, bounds, datagen, traffic
from ddam_sim.am_core import FeatureMapConfig, KVStream, LossSpec, estimate_grad_bound
from ddam_sim.config import ExperimentConfig, ScenarioKind
from ddam_sim.errors import ConfigurationError, DdamError, SweepPointError, WorkerCrashError
from ddam_sim.protocols import Protocol, Trajectory, run_cdogd, run_ogd, run_togd
from ddam_sim.settings import default_workers
from ddam_sim.topology import (
    CDOGD_CAPACITY,
    DelaySummary,
    LogicalWeights,
    PhysicalGraph,
    RoutingTree,
    delay_summary,
    erdos_renyi_graph,
    graph_from_edge_list,
    link_capacity,
    metropolis_weights,
    mixing_alpha,
    read_adjacency_csv,
    validate_weights,
)
from ddam_sim.trees import design_trees

logger = logging.getLogger(__name__)

PROTOCOL_ORDER = {p: i for i, p in enumerate(Protocol)}


@dataclass(frozen=True)
class WorldPoint:
    seed: int
    rho: float
    y0: float

    def coordinates(self) -> dict:
        return {"seed": self.seed, "rho": self.rho, "y0": self.y0}


@dataclass
class TreeDesign:
    trees: dict[int, RoutingTree]
    summaries: dict[int, DelaySummary]
    constants: bounds.BoundConstants
    c_max: int


@dataclass
class World:
    point: WorldPoint
    stream: KVStream
    W: LogicalWeights
    graph: PhysicalGraph
    specs: list[LossSpec]
    B: float
    flat: bounds.BoundConstants
    designs: dict[Protocol, TreeDesign] = field(default_factory=dict)
    grad_bound_estimated: bool = False


def effective_capacity(c_max: int) -> int:
    """C_max with a floor of one, so a network without remote traffic keeps the full horizon."""
    return max(c_max, 1)


def togd_steps(T: int, c_max: int) -> int:
    steps = T // effective_capacity(c_max)
    if steps < 1:
        raise ConfigurationError(f"horizon {T} is shorter than the link capacity C_max = {c_max}")
    return steps


def _required_horizon(cfg: ExperimentConfig) -> int:
    return max(cfg.sweep.horizons)


def build_stream(cfg: ExperimentConfig, point: WorldPoint) -> KVStream:
    sc = cfg.scenario
    T = _required_horizon(cfg)
    if sc.kind == ScenarioKind.SYNTHETIC:
        syn = datagen.SyntheticConfig(
            n_agents=sc.n_agents,
            d_k=sc.d_k,
            d_v=sc.d_v,
            rho=point.rho,
            noise_var=sc.noise_var,
            seed=point.seed,
            y0=point.y0,
            y1=cfg.weights.y1,
        )
        return datagen.gen_stream(syn, datagen.gen_ground_truth(syn), T, drift=sc.drift)
    if sc.kind == ScenarioKind.TRAFFIC:
        records = traffic.load_traffic(sc.traffic_path)
    else:
        records = traffic.gen_periodic_traffic(
            sc.n_agents, sc.days, seed=point.seed, noise=sc.traffic_noise, weekly=sc.weekly
        )
    stream = traffic.build_kv(records, ap_ids=sc.ap_ids)
    if stream.horizon < T:
        raise ConfigurationError(f"traffic covers {stream.horizon} hours, horizon {T} requested")
    return stream.truncate(T)


def build_weights(cfg: ExperimentConfig, point: WorldPoint, n_agents: int) -> LogicalWeights:
    wc = cfg.weights
    if wc.source == "identity":
        return validate_weights(np.eye(n_agents))
    if wc.source == "uniform":
        return validate_weights(np.full((n_agents, n_agents), 1.0 / n_agents))
    if wc.source == "matrix":
        return validate_weights(np.asarray(wc.matrix, dtype=np.float64), n_agents)
    syn = datagen.SyntheticConfig(n_agents=n_agents, seed=point.seed, y0=point.y0, y1=wc.y1)
    return datagen.gen_weights(syn)


def build_graph(cfg: ExperimentConfig, point: WorldPoint, n_agents: int) -> PhysicalGraph:
    gc = cfg.graph
    if gc.source == "edge_list":
        rows = gc.edges if gc.delays is None else [(i, j, d) for (i, j), d in zip(gc.edges, gc.delays)]
        return graph_from_edge_list(n_agents, rows)
    if gc.source == "adjacency_csv":
        return read_adjacency_csv(gc.path, n_agents)
    return erdos_renyi_graph(n_agents, gc.p, seed=point.seed if gc.seed is None else gc.seed)


def build_specs(cfg: ExperimentConfig, stream: KVStream) -> tuple[list[LossSpec], bool]:
    sc = cfg.scenario
    gating = None if sc.gating is None else np.asarray(sc.gating, dtype=np.float64)
    fmap = FeatureMapConfig(sc.feature_dim, seed=sc.feature_seed) if sc.loss.uses_feature_map else None
    base = LossSpec(sc.loss, gating, fmap)
    if sc.grad_bound is not None:
        return [base.with_grad_bound(sc.grad_bound)] * stream.n_agents, False
    specs = [
        base.with_grad_bound(estimate_grad_bound(base, stream.keys[n], stream.values[n], sc.B))
        for n in range(stream.n_agents)
    ]
    logger.warning("gradient bounds estimated from the stream (max G = %.4g)", max(s.grad_bound for s in specs))
    return specs, True


def _design(protocol: Protocol, cfg: ExperimentConfig, world: World) -> TreeDesign:
    method = "steiner" if protocol == Protocol.TOGD_STEINER else "sumdelay"
    trees = design_trees(world.graph, world.W, method, cfg.graph.node_budget, accept_incumbent=True)
    summaries = {n: delay_summary(trees[n], world.W.support(n)) for n in range(world.W.n_agents)}
    constants = bounds.bound_constants(world.W, world.specs, summaries, world.B)
    return TreeDesign(trees, summaries, constants, link_capacity(trees, world.W))


def build_world(cfg: ExperimentConfig, point: WorldPoint) -> World:
    stream = build_stream(cfg, point)
    N = stream.n_agents
    W = build_weights(cfg, point, N)
    graph = build_graph(cfg, point, N)
    specs, estimated = build_specs(cfg, stream)
    B = cfg.scenario.B
    flat = bounds.bound_constants(W, specs, {}, B)
    world = World(point, stream, W, graph, specs, B, flat, grad_bound_estimated=estimated)
    for protocol in cfg.sweep.protocols:
        if protocol.delayed:
            world.designs[protocol] = _design(protocol, cfg, world)
    return world


def _rates(cfg: ExperimentConfig, protocol: Protocol, world: World, steps: int) -> np.ndarray:
    N = world.W.n_agents
    if cfg.learning_rate.mode == "fixed":
        return np.full(N, cfg.learning_rate.value)
    if protocol == Protocol.OGD:
        return np.array([bounds.lr_ogd(world.B, g, steps) for g in world.flat.G_bar])
    if protocol == Protocol.CDOGD:
        return np.full(N, bounds.lr_cdogd(steps))
    c = world.designs[protocol].constants
    return np.array([bounds.lr_togd(world.B, c.Q[n], c.J[n], c.delta_tau[n], steps) for n in range(N)])


def _bound(cfg: ExperimentConfig, protocol: Protocol, world: World, steps: int, pl, eta, alpha: float) -> float:
    fixed = cfg.learning_rate.mode == "fixed"
    if protocol == Protocol.OGD:
        return bounds.theoretical_bound(bounds.BoundKind.OGD_DYNAMIC, world.flat, steps, PL=pl, eta=eta if fixed else None)
    if protocol == Protocol.CDOGD:
        if alpha >= 1.0:
            return math.nan
        return bounds.theoretical_bound(bounds.BoundKind.CDOGD_STATIC, world.flat, steps, alpha=alpha)
    c = world.designs[protocol].constants
    if fixed:
        return bounds.theoretical_bound(bounds.BoundKind.TOGD_THEOREM, c, steps, PL=pl, eta=eta)
    return bounds.theoretical_bound(bounds.BoundKind.TOGD_DYNAMIC, c, steps, PL=pl)


def _run(protocol: Protocol, world: World, steps: int, eta: np.ndarray, A: np.ndarray) -> Trajectory:
    if protocol == Protocol.OGD:
        return run_ogd(world.stream, world.W, world.specs, world.B, eta, steps)
    if protocol == Protocol.CDOGD:
        return run_cdogd(world.stream, A, world.specs, world.B, eta, steps)
    trees = world.designs[protocol].trees
    return run_togd(world.stream, world.W, trees, world.specs, world.B, eta, steps, protocol=protocol)


def run_world(cfg: ExperimentConfig, point: WorldPoint) -> list[analytics.RegretReport]:
    """All protocols, horizons and comparator windows of one world point."""
    try:
        return _run_world(cfg, point)
    except DdamError as e:
        if isinstance(e, SweepPointError):
            raise
        raise SweepPointError(point.coordinates(), e) from e


def _run_world(cfg: ExperimentConfig, point: WorldPoint) -> list[analytics.RegretReport]:
    world = build_world(cfg, point)
    A = metropolis_weights(world.graph)
    alpha = mixing_alpha(A)
    reports = []
    for protocol in cfg.sweep.protocols:
        if protocol.delayed:
            c_max = world.designs[protocol].c_max
        else:
            c_max = CDOGD_CAPACITY if protocol == Protocol.CDOGD else 0
        for T in cfg.sweep.horizons:
            steps = togd_steps(T, c_max) if protocol.delayed else T
            eta = _rates(cfg, protocol, world, steps)
            traj = _run(protocol, world, steps, eta, A)
            static = analytics.static_comparator(world.stream, world.W, world.specs, world.B, steps)
            s_reg = analytics.static_regret(traj, world.stream, world.W, world.specs, static.U[:, 0])
            self_nmse, cross_nmse = analytics.nmse(
                traj, world.stream, world.W, world.specs, final=cfg.scenario.nmse_final
            )
            windows = dict.fromkeys(min(omega, steps) for omega in cfg.sweep.omega or [steps])
            for omega in windows:
                if omega == steps:
                    comparators = static
                else:
                    comparators = analytics.windowed_comparators(
                        world.stream, world.W, world.specs, world.B, steps, omega
                    )
                per_agent = analytics.regret_per_agent(traj, world.stream, world.W, world.specs, comparators)
                agent_pl = analytics.path_length(comparators)
                reports.append(
                    analytics.RegretReport(
                        protocol=protocol.value,
                        horizon=T,
                        steps_run=steps,
                        seed=point.seed,
                        static_regret=s_reg,
                        dynamic_regret=analytics.dynamic_regret(
                            traj, world.stream, world.W, world.specs, comparators
                        ),
                        pl=float(np.sum(agent_pl)),
                        bound=_bound(cfg, protocol, world, steps, agent_pl, eta, alpha),
                        self_nmse=self_nmse,
                        cross_nmse=cross_nmse,
                        c_max=c_max,
                        per_agent_dynamic=per_agent,
                        per_agent_pl=agent_pl,
                        sweep={"rho": point.rho, "y0": point.y0, "omega": comparators.omega},
                        metadata={
                            "eta_mean": float(np.mean(eta)),
                            "alpha": alpha,
                            "grad_bound_estimated": world.grad_bound_estimated,
                            "prng": world.stream.metadata.get("prng", datagen.PRNG_NAME),
                            **traj.metadata,
                        },
                    )
                )
            logger.info(
                "%s seed=%s rho=%s y0=%s T=%s (steps %s): static regret %.6g",
                protocol.value,
                point.seed,
                point.rho,
                point.y0,
                T,
                steps,
                s_reg,
            )
    return reports


def world_points(cfg: ExperimentConfig) -> list[WorldPoint]:
    rhos = cfg.sweep.rho or [cfg.scenario.rho]
    y0s = cfg.sweep.y0 or [cfg.weights.y0]
    return [WorldPoint(seed, rho, y0) for seed in cfg.sweep.seeds for rho in rhos for y0 in y0s]


def report_key(r: analytics.RegretReport) -> tuple:
    return (
        PROTOCOL_ORDER[Protocol(r.protocol)],
        r.sweep["rho"],
        r.sweep["y0"],
        r.horizon,
        r.sweep["omega"],
        r.seed,
    )


def _pooled(cfg: ExperimentConfig, points: list[WorldPoint], workers: int) -> list[list[analytics.RegretReport]]:
    batches = []
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(run_world, cfg, point) for point in points]
        for point, future in zip(points, futures):
            try:
                batches.append(future.result())
            except DdamError:
                raise
            except Exception as e:
                logger.error("worker for %s failed: %s", point.coordinates(), e)
                raise WorkerCrashError(point.coordinates(), f"{type(e).__name__}: {e}") from e
    return batches


def run_experiment(
    cfg: ExperimentConfig,
    workers: int | None = None,
    progress: Callable[[analytics.RegretReport], None] | None = None,
) -> list[analytics.RegretReport]:
    """Every (protocol, sweep point, seed) row, in canonical order."""
    points = world_points(cfg)
    workers = default_workers() if workers is None else workers
    logger.info("running %s world points with %s worker(s)", len(points), workers)
    if workers > 1 and len(points) > 1:
        batches = _pooled(cfg, points, workers)
    else:
        batches = [run_world(cfg, point) for point in points]
    reports = sorted((r for batch in batches for r in batch), key=report_key)
    if progress is not None:
        for r in reports:
            progress(r)
    return reports


def tree_report(cfg: ExperimentConfig) -> tuple[pd.DataFrame, dict[str, int]]:
    """Steiner and sum-delay trees side by side for the first world point.

    Returns one row per (agent, method) and the network C_max of each design.
    """
    point = world_points(cfg)[0]
    if cfg.scenario.kind == ScenarioKind.SYNTHETIC:
        n_agents = cfg.scenario.n_agents
    else:
        n_agents = build_stream(cfg, point).n_agents
    W = build_weights(cfg, point, n_agents)
    graph = build_graph(cfg, point, n_agents)
    rows = []
    capacity = {}
    for method in ("steiner", "sumdelay"):
        trees = design_trees(graph, W, method, cfg.graph.node_budget, accept_incumbent=True)
        capacity[method] = link_capacity(trees, W)
        for n in range(n_agents):
            s = delay_summary(trees[n], W.support(n))
            rows.append(
                {
                    "agent": n,
                    "method": method,
                    "edges": " ".join(f"{i}-{j}" for i, j in sorted(trees[n].tree_edges)),
                    "tau_sum": s.tau_sum,
                    "tau_max": s.tau_max,
                    "delta_tau": s.delta_tau,
                    "dist": trees[n].sum_path_delay(),
                }
            )
    return pd.DataFrame(rows), capacity
