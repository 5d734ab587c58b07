"""Online protocols as step-wise state machines.

* full-information OGD: every agent sees all weighted gradients at its current memory;
* C-DOGD: consensus averaging with a doubly stochastic matrix plus a local gradient step;
* DDAM-TOGD: agents broadcast memory snapshots down their routing tree, remote agents
  answer with gradients on their own data, and each update uses the most recent reply per
  source, gated by ``t > tau_{n,m}``.

All three start from the origin, project onto the Frobenius ball after every step, and
share one gradient kernel, so with pure-local weights their trajectories coincide bitwise.
"""

import logging
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Mapping, Sequence

import numpy as np
from numpy.typing import NDArray

from ddam_sim.am_core import KVStream, LossSpec, MemoryMatrix, batch_grad, feature_dim, project
from ddam_sim.errors import DataError, InvariantViolation, ProtocolError, TopologyError
from ddam_sim.topology import LogicalWeights, RoutingTree, check_doubly_stochastic

logger = logging.getLogger(__name__)

# schedule(n, t) -> learning rate of agent n at step t
Schedule = Callable[[int, int], float]


class Protocol(str, Enum):
    OGD = "OGD"
    CDOGD = "CDOGD"
    TOGD_STEINER = "TOGD_Steiner"
    TOGD_STAR = "TOGD_Star"

    @property
    def delayed(self) -> bool:
        return self in (Protocol.TOGD_STEINER, Protocol.TOGD_STAR)


class MessageKind(str, Enum):
    PARAM_SNAPSHOT = "param_snapshot"
    GRADIENT_REPLY = "gradient_reply"


@dataclass(frozen=True)
class InFlightMessage:
    kind: MessageKind
    source: int
    dest: int
    payload: MemoryMatrix
    sent_at: int
    arrives_at: int
    # Step whose parameters (and remote data) the payload refers to.
    origin: int


@dataclass
class AgentState:
    agent: int
    X: MemoryMatrix
    eta: float
    inbox: deque = field(default_factory=deque)
    latest_grad: dict[int, tuple[MemoryMatrix, int]] = field(default_factory=dict)


@dataclass
class Trajectory:
    """Iterates X_{n,t} used at steps t = 1..T, stacked as (N, T, d_v, d_k')."""

    protocol: Protocol
    X: NDArray[np.float64]
    eta: NDArray[np.float64]
    metadata: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return self.X.shape[1]

    @property
    def final(self) -> NDArray[np.float64]:
        return self.X[:, -1]


def _kernel_key(spec: LossSpec) -> tuple:
    gating = None if spec.gating is None else spec.gating.tobytes()
    return spec.variant, gating, spec.feature_map


def _spec_groups(members: Sequence[int], specs: Sequence[LossSpec]) -> list[tuple[LossSpec, list[int]]]:
    """Members sharing a loss kernel (gradient bounds aside), in first-appearance order."""
    groups: dict[tuple, tuple[LossSpec, list[int]]] = {}
    for m in members:
        groups.setdefault(_kernel_key(specs[m]), (specs[m], []))[1].append(m)
    return list(groups.values())


def weighted_gradient(
    X: MemoryMatrix,
    members: Sequence[int],
    weights: NDArray[np.float64],
    specs: Sequence[LossSpec],
    keys: NDArray[np.float64],
    values: NDArray[np.float64],
) -> MemoryMatrix:
    """sum over members m of weights[m] * grad f_m(X); keys/values are indexed by agent."""
    total = None
    for spec, group in _spec_groups(members, specs):
        part = batch_grad(spec, X, keys[group], values[group], weights[group])
        total = part if total is None else total + part
    return total if total is not None else np.zeros_like(X)


def _initial_memory(stream: KVStream, specs: Sequence[LossSpec]) -> list[MemoryMatrix]:
    return [np.zeros((stream.d_v, feature_dim(spec, stream.d_k))) for spec in specs]


def _rate(state: AgentState, t: int, schedule: Schedule | None) -> float:
    return state.eta if schedule is None else float(schedule(state.agent, t))


def _check_horizon(stream: KVStream, T: int) -> None:
    if T < 1:
        raise DataError(f"horizon must be at least 1, got {T}")
    if stream.horizon < T:
        raise DataError(f"stream exhausted: {stream.horizon} steps available, horizon {T}")


def ogd_step(
    state: AgentState,
    grads: Mapping[int, MemoryMatrix],
    weights: NDArray[np.float64],
    B: float,
    eta: float | None = None,
) -> AgentState:
    """Full-information projected step from per-source gradients at the current memory."""
    direction = np.zeros_like(state.X)
    for m in np.flatnonzero(weights > 0):
        if int(m) not in grads:
            raise ProtocolError(f"agent {state.agent} lacks the gradient of agent {int(m)}")
        direction = direction + weights[m] * grads[int(m)]
    rate = state.eta if eta is None else eta
    return replace(state, X=project(state.X - rate * direction, B))


def cdogd_step(
    states: Sequence[AgentState],
    A: NDArray[np.float64],
    local_grads: Sequence[MemoryMatrix],
    B: float,
    etas: Sequence[float] | None = None,
) -> list[AgentState]:
    """One synchronous consensus round followed by local gradient steps."""
    check_doubly_stochastic(A)
    stacked = np.stack([s.X for s in states])
    mixed = np.einsum("nm,mij->nij", A, stacked)
    out = []
    for n, state in enumerate(states):
        rate = state.eta if etas is None else etas[n]
        out.append(replace(state, X=project(mixed[n] - rate * local_grads[n], B)))
    return out


def run_ogd(
    stream: KVStream,
    W: LogicalWeights,
    specs: Sequence[LossSpec],
    B: float,
    eta: Sequence[float],
    T: int,
    schedule: Schedule | None = None,
) -> Trajectory:
    _check_horizon(stream, T)
    N = W.n_agents
    states = [AgentState(n, X, float(eta[n])) for n, X in enumerate(_initial_memory(stream, specs))]
    traj = np.empty((N, T, *states[0].X.shape))
    supports = [W.support(n) for n in range(N)]
    for t in range(1, T + 1):
        keys, values = stream.keys[:, t - 1], stream.values[:, t - 1]
        for n, state in enumerate(states):
            traj[n, t - 1] = state.X
            direction = weighted_gradient(state.X, supports[n], W.W[n], specs, keys, values)
            state.X = project(state.X - _rate(state, t, schedule) * direction, B)
    return Trajectory(Protocol.OGD, traj, np.asarray(eta, dtype=np.float64))


def run_cdogd(
    stream: KVStream,
    A: NDArray[np.float64],
    specs: Sequence[LossSpec],
    B: float,
    eta: Sequence[float],
    T: int,
    schedule: Schedule | None = None,
) -> Trajectory:
    _check_horizon(stream, T)
    check_doubly_stochastic(A)
    N = A.shape[0]
    states = [AgentState(n, X, float(eta[n])) for n, X in enumerate(_initial_memory(stream, specs))]
    traj = np.empty((N, T, *states[0].X.shape))
    one = np.ones(1)
    for t in range(1, T + 1):
        keys, values = stream.keys[:, t - 1], stream.values[:, t - 1]
        local = []
        for n, state in enumerate(states):
            traj[n, t - 1] = state.X
            local.append(batch_grad(specs[n], state.X, keys[n : n + 1], values[n : n + 1], one))
        etas = [_rate(s, t, schedule) for s in states]
        states = cdogd_step(states, A, local, B, etas)
    return Trajectory(Protocol.CDOGD, traj, np.asarray(eta, dtype=np.float64))


class TogdNetwork:
    """All agents, their routing trees and the messages in flight."""

    def __init__(
        self,
        stream: KVStream,
        W: LogicalWeights,
        trees: Mapping[int, RoutingTree],
        specs: Sequence[LossSpec],
        B: float,
        eta: Sequence[float],
        schedule: Schedule | None = None,
    ):
        self.stream = stream
        self.W = W
        self.specs = specs
        self.B = B
        self.schedule = schedule
        self.states = [AgentState(n, X, float(eta[n])) for n, X in enumerate(_initial_memory(stream, specs))]
        self.remote = [W.remote_support(n) for n in range(W.n_agents)]
        # One-way delay of the leg n -> m along tree n (and back).
        self.one_way: dict[tuple[int, int], int] = {}
        for n, targets in enumerate(self.remote):
            for m in targets:
                if n not in trees or m not in trees[n].hop_count:
                    raise TopologyError(f"tree of agent {n} does not reach target {m}", pair=(n, m))
                self.one_way[(n, m)] = trees[n].hop_count[m]
        self.pending: dict[int, list[InFlightMessage]] = {}
        self.sent = 0
        self.t = 0

    def round_trip(self, n: int, m: int) -> int:
        return 0 if n == m else 2 * self.one_way[(n, m)]

    def enqueue(self, msg: InFlightMessage, now: int) -> None:
        if msg.arrives_at <= now - 1 or msg.arrives_at < msg.sent_at:
            raise InvariantViolation(
                f"{msg.kind.value} {msg.source}->{msg.dest} scheduled for step {msg.arrives_at} at step {now}"
            )
        self.pending.setdefault(msg.arrives_at, []).append(msg)
        self.sent += 1


def togd_step(net: TogdNetwork, t: int) -> TogdNetwork:
    """Deliver, reply, broadcast, then update every agent for step t."""
    if t < 1 or t != net.t + 1:
        raise InvariantViolation(f"step {t} follows step {net.t}")
    stream = net.stream
    one = np.ones(1)

    # (i) deliver
    for msg in net.pending.pop(t, []):
        net.states[msg.dest].inbox.append(msg)

    # (ii) answer snapshots with gradients on own data of the snapshot's step; keep replies
    for state in net.states:
        while state.inbox:
            msg = state.inbox.popleft()
            if msg.kind == MessageKind.PARAM_SNAPSHOT:
                m, n, s = state.agent, msg.source, msg.origin
                kv = stream.pair(m, s)
                grad = batch_grad(net.specs[m], msg.payload, kv.key[None], kv.value[None], one)
                leg = net.one_way[(n, m)]
                net.enqueue(InFlightMessage(MessageKind.GRADIENT_REPLY, m, n, grad, t, t + leg, s), t)
            else:
                known = state.latest_grad.get(msg.source)
                if known is None or msg.origin > known[1]:
                    state.latest_grad[msg.source] = (msg.payload, msg.origin)

    # (iii) broadcast current memories
    for n, state in enumerate(net.states):
        for m in net.remote[n]:
            leg = net.one_way[(n, m)]
            net.enqueue(InFlightMessage(MessageKind.PARAM_SNAPSHOT, n, m, state.X, t, t + leg, t), t)

    # (iv) delayed projected update
    keys, values = stream.keys[:, t - 1], stream.values[:, t - 1]
    W = net.W.W
    for n, state in enumerate(net.states):
        direction = None
        if W[n, n] > 0:
            direction = batch_grad(net.specs[n], state.X, keys[n : n + 1], values[n : n + 1], W[n, n : n + 1])
        for m in net.remote[n]:
            tau = net.round_trip(n, m)
            if t <= tau:
                continue
            grad, origin = state.latest_grad[m]
            if origin != t - tau:
                raise InvariantViolation(
                    f"agent {n} holds gradient of {m} from step {origin}, expected {t - tau}"
                )
            term = W[n, m] * grad
            direction = term if direction is None else direction + term
        if direction is None:
            direction = np.zeros_like(state.X)
        state.X = project(state.X - _rate(state, t, net.schedule) * direction, net.B)
    net.t = t
    return net


def run_togd(
    stream: KVStream,
    W: LogicalWeights,
    trees: Mapping[int, RoutingTree],
    specs: Sequence[LossSpec],
    B: float,
    eta: Sequence[float],
    T: int,
    schedule: Schedule | None = None,
    protocol: Protocol = Protocol.TOGD_STAR,
) -> Trajectory:
    _check_horizon(stream, T)
    net = TogdNetwork(stream, W, trees, specs, B, eta, schedule)
    N = W.n_agents
    traj = np.empty((N, T, *net.states[0].X.shape))
    for t in range(1, T + 1):
        for n, state in enumerate(net.states):
            traj[n, t - 1] = state.X
        togd_step(net, t)
    logger.debug("%s ran %s steps, %s messages", protocol.value, T, net.sent)
    return Trajectory(protocol, traj, np.asarray(eta, dtype=np.float64), {"messages": net.sent})
