"""Semi Bayes nets and iterated games built by gluing a kernel net to itself.

A semi Bayes net is a DAG whose chance nodes carry sampling kernels and whose
decision nodes are owned by players but carry no distribution; the player
policies are supplied at sampling time.  An iterated game repeats a kernel net
T times, threading selected node values forward through a glue binding, and
scores each repetition with per-player reward functions.

The iterated net is never materialized as one rolled-out DAG; `rollout`
applies the kernel lazily, slice by slice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Sequence

import numpy as np

Value = Any
ParentValues = Mapping[str, Value]
Kernel = Callable[[ParentValues, np.random.Generator], Value]
Policy = Callable[[ParentValues, np.random.Generator], Value]
RewardFn = Callable[[Mapping[str, Value]], float]
Instantiation = dict[str, Value]


# ---------------------------------------------------------------------------
# Variable spaces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FiniteDiscrete:
    """Integer values 0 .. cardinality-1."""

    cardinality: int

    def __post_init__(self):
        if self.cardinality < 1:
            raise ValueError(f"cardinality must be >= 1, got {self.cardinality}")

    def contains(self, value: Value) -> bool:
        return isinstance(value, (int, np.integer)) and 0 <= value < self.cardinality


@dataclass(frozen=True)
class BoundedReal:
    """A real value in the closed interval [lo, hi]."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValueError(f"need lo <= hi, got [{self.lo}, {self.hi}]")

    def contains(self, value: Value) -> bool:
        return isinstance(value, (int, float, np.floating, np.integer)) and (
            self.lo <= value <= self.hi
        )


@dataclass(frozen=True)
class RealVector:
    """A real vector of fixed dimension."""

    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")

    def contains(self, value: Value) -> bool:
        try:
            return len(value) == self.dim
        except TypeError:
            return False


VariableSpace = FiniteDiscrete | BoundedReal | RealVector


# ---------------------------------------------------------------------------
# Nodes and nets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Chance:
    kernel: Kernel


@dataclass(frozen=True)
class Decision:
    owner: str


@dataclass(frozen=True)
class NodeSpec:
    name: str
    space: VariableSpace
    kind: Chance | Decision
    parents: tuple[str, ...] = ()


def chance(name: str, space: VariableSpace, kernel: Kernel,
           parents: Sequence[str] = ()) -> NodeSpec:
    return NodeSpec(name, space, Chance(kernel), tuple(parents))


def decision(name: str, space: VariableSpace, owner: str,
             parents: Sequence[str] = ()) -> NodeSpec:
    return NodeSpec(name, space, Decision(owner), tuple(parents))


def constant_kernel(value: Value) -> Kernel:
    def kernel(parents: ParentValues, rng: np.random.Generator) -> Value:
        return value
    return kernel


def boundary_kernel(name: str) -> Kernel:
    """Kernel for a root that must be filled by gluing, never sampled."""

    def kernel(parents: ParentValues, rng: np.random.Generator) -> Value:
        raise ValueError(f"missing boundary value for glued root '{name}'")
    return kernel


class SemiBayesNet:
    """An ordered collection of nodes; players derived from decision owners.

    Construction is permissive: structural problems (duplicate names, dangling
    parents, cycles, ownership violations) are reported by `validate` rather
    than raised, so malformed nets can be inspected.
    """

    def __init__(self, nodes: Sequence[NodeSpec]):
        self.nodes: tuple[NodeSpec, ...] = tuple(nodes)
        self._by_name: dict[str, NodeSpec] = {}
        for node in self.nodes:
            self._by_name.setdefault(node.name, node)
        players = []
        for node in self.nodes:
            if isinstance(node.kind, Decision) and node.kind.owner not in players:
                players.append(node.kind.owner)
        self.players: tuple[str, ...] = tuple(players)
        self._topo_cache: tuple[str, ...] | None = None

    def node(self, name: str) -> NodeSpec:
        return self._by_name[name]

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def is_root(self, name: str) -> bool:
        return not self._by_name[name].parents


@dataclass(frozen=True)
class GlueBinding:
    """Maps node names of the preceding slice to root names of the next kernel."""

    pairs: Mapping[str, str]


@dataclass(frozen=True)
class IteratedGame:
    base: SemiBayesNet
    kernel: SemiBayesNet
    binding: GlueBinding
    horizon: int
    rewards: Mapping[str, RewardFn]

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")


@dataclass
class Trajectory:
    base: Instantiation
    slices: list[Instantiation]
    rewards: dict[str, list[float]]


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def validate(net: SemiBayesNet) -> list[str]:
    """Return all invariant violations of the net (empty list if valid)."""
    violations = []
    seen: set[str] = set()
    for node in net.nodes:
        if node.name in seen:
            violations.append(f"duplicate node name '{node.name}'")
        seen.add(node.name)
    for node in net.nodes:
        if len(set(node.parents)) != len(node.parents):
            violations.append(f"node '{node.name}' lists a parent twice")
        for parent in node.parents:
            if parent not in net:
                violations.append(
                    f"node '{node.name}' references missing parent '{parent}'")
    owners: dict[str, list[str]] = {}
    for node in net.nodes:
        if isinstance(node.kind, Decision):
            owners.setdefault(node.kind.owner, []).append(node.name)
    for player, owned in owners.items():
        if len(owned) != 1:
            violations.append(
                f"player '{player}' owns {len(owned)} decision nodes "
                f"({', '.join(owned)}); exactly one is required")
    try:
        topological_order(net)
    except ValueError as exc:
        violations.append(str(exc))
    return violations


def validate_glue(prev: SemiBayesNet, kernel: SemiBayesNet,
                  binding: GlueBinding) -> list[str]:
    """Check that `binding` legally glues `prev` outputs onto `kernel` roots."""
    violations = []
    targets = list(binding.pairs.values())
    if len(set(targets)) != len(targets):
        violations.append("binding is not injective: two sources share a target")
    for source, target in binding.pairs.items():
        if source not in prev:
            violations.append(f"binding source '{source}' not in preceding net")
            continue
        if target not in kernel:
            violations.append(f"binding target '{target}' not in kernel net")
            continue
        if not kernel.is_root(target):
            violations.append(
                f"binding target '{target}' has parents; glue targets must be roots")
        if prev.node(source).space != kernel.node(target).space:
            violations.append(
                f"space mismatch for glued pair {source} -> {target}: "
                f"{prev.node(source).space} vs {kernel.node(target).space}")
    return violations


def validate_game(game: IteratedGame) -> list[str]:
    """Validate both nets, the binding for the first and repeated gluings,
    and reward coverage of the kernel's players."""
    violations = [f"base: {v}" for v in validate(game.base)]
    violations += [f"kernel: {v}" for v in validate(game.kernel)]
    violations += [f"base->kernel: {v}"
                   for v in validate_glue(game.base, game.kernel, game.binding)]
    violations += [f"kernel->kernel: {v}"
                   for v in validate_glue(game.kernel, game.kernel, game.binding)]
    for player in game.kernel.players:
        if player not in game.rewards:
            violations.append(f"no reward function for player '{player}'")
    return violations


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def topological_order(net: SemiBayesNet) -> list[str]:
    """Parents-before-children order, stable by declaration order among ties.

    Raises ValueError naming a node on a cycle if the parent relation is
    cyclic.  Nodes whose parents are missing from the net are treated as
    blocked and reported the same way.
    """
    if net._topo_cache is not None:
        return list(net._topo_cache)
    placed: set[str] = set()
    order: list[str] = []
    remaining = [node.name for node in net.nodes]
    while remaining:
        for name in remaining:
            node = net.node(name)
            if all(p in placed for p in node.parents):
                order.append(name)
                placed.add(name)
                remaining.remove(name)
                break
        else:
            witness = _cycle_witness(net, remaining, placed)
            raise ValueError(f"cycle detected through node '{witness}'")
    net._topo_cache = tuple(order)
    return order


def _cycle_witness(net: SemiBayesNet, remaining: list[str], placed: set[str]) -> str:
    # Walk unplaced-parent edges until a node repeats; that node is on a cycle
    # (or depends on one / on a missing parent).
    current = remaining[0]
    seen = []
    while current not in seen:
        seen.append(current)
        nxt = next((p for p in net.node(current).parents
                    if p not in placed and p in net), None)
        if nxt is None:
            return current
        current = nxt
    return current


def sample_slice(net: SemiBayesNet, boundary: Mapping[str, Value],
                 policies: Mapping[str, Policy],
                 rng: np.random.Generator) -> Instantiation:
    """Ancestral sampling of one net, with glued roots preassigned.

    Chance nodes are drawn from their kernels, decision nodes from the owning
    player's policy, both on the node's parent values.  Every produced value
    is checked against the node's space.
    """
    inst: Instantiation = {}
    for name in boundary:
        if name not in net:
            raise ValueError(f"boundary value for unknown node '{name}'")
        if not net.is_root(name):
            raise ValueError(f"boundary value for non-root node '{name}'")
        inst[name] = boundary[name]
    if net._topo_cache is None:
        topological_order(net)
    for name in net._topo_cache:
        if name in inst:
            continue
        node = net.node(name)
        parent_values = {p: inst[p] for p in node.parents}
        if isinstance(node.kind, Chance):
            value = node.kind.kernel(parent_values, rng)
        else:
            policy = policies.get(node.kind.owner)
            if policy is None:
                raise ValueError(
                    f"no policy for player '{node.kind.owner}' (node '{name}')")
            value = policy(parent_values, rng)
        if not node.space.contains(value):
            raise ValueError(
                f"value {value!r} for node '{name}' is outside its space "
                f"{node.space}")
        inst[name] = value
    return inst


def rollout(game: IteratedGame, policies: Mapping[str, Policy],
            rng: np.random.Generator) -> Trajectory:
    """Sample the base slice, then apply the kernel `horizon` times.

    The same policy objects are consulted at every slice; glued values are
    threaded forward through the binding; each player's reward is evaluated
    on every kernel slice.
    """
    base_inst = sample_slice(game.base, {}, policies, rng)
    slices: list[Instantiation] = []
    rewards: dict[str, list[float]] = {player: [] for player in game.rewards}
    prev = base_inst
    for _ in range(game.horizon):
        boundary = {}
        for source, target in game.binding.pairs.items():
            if source not in prev:
                raise ValueError(
                    f"missing boundary value: previous slice has no node "
                    f"'{source}'")
            boundary[target] = prev[source]
        inst = sample_slice(game.kernel, boundary, policies, rng)
        for player, reward_fn in game.rewards.items():
            value = float(reward_fn(inst))
            if not math.isfinite(value):
                raise ValueError(f"non-finite reward for player '{player}'")
            rewards[player].append(value)
        slices.append(inst)
        prev = inst
    return Trajectory(base_inst, slices, rewards)
