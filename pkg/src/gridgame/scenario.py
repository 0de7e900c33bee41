"""Three-node distribution-feeder battle between a SCADA operator and an
attacker who controls the reactive injection of a compromised generator.

Physics is the linearized radial power flow (LinDistFlow): with per-unit
injections (p2, q2) at the load node and (p3, q3) at the generator node,

    P2 = -p3          Q2 = -q3
    P1 = P2 + p2      Q1 = Q2 + q2
    V2 = V1 - (r1*P1 + x1*Q1)
    V3 = V2 - (r2*P2 + x2*Q2)

The defender steps the substation voltage V1 up or down by one transformer
tap per move (clamped to hardware limits); the attacker picks q3 from an
11-point grid spanning [-q3_max, +q3_max].  The defender is rewarded for
keeping V2 and V3 near 1.0; the attacker scores whenever V2 leaves the
acceptable band.  Each player also keeps a scalar memory metric summarizing
a window of recent observations.

Every operation here is a pure function of its inputs plus an explicit
numpy Generator, so episodes parallelize with independent generators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping, NamedTuple

import numpy as np

from . import netform
from .levelk import FeatureEncoder, PriorPolicy
from .netform import (FiniteDiscrete, GlueBinding, IteratedGame, RealVector,
                      SemiBayesNet, boundary_kernel, chance, constant_kernel,
                      decision)

DEFENDER = "defender"
ATTACKER = "attacker"

ACTION_DOWN, ACTION_HOLD, ACTION_UP = 0, 1, 2
DEFENDER_ACTIONS = 3
ATTACKER_ACTIONS = 11

DEFAULT_HORIZON = 100


@dataclass(frozen=True)
class GridParams:
    """Circuit constants, player limits, and scenario defaults (per-unit)."""

    r1: float = 0.03
    r2: float = 0.03
    x1: float = 0.03
    x2: float = 0.03
    v0: float = 1.0                      # nominal voltage base
    tap_step: float = 0.02               # transformer voltage increment
    v1_min: float = 0.90
    v1_max: float = 1.10
    band_halfwidth: float = 0.05         # half width of the good-voltage band
    strike_threshold: float = 0.07       # projected |V2 - 1| that triggers a strike
    q3_max: float = 1.0
    p3: float = 1.0
    p2_range: tuple[float, float] = (1.35, 1.5)
    q2_factor: float = 0.5
    memory_window: int = 5               # m: metrics sum over the last m+1 steps
    v1_start: float = 1.0
    defender_start_action: int = ACTION_HOLD
    attacker_start_action: int = 5       # grid midpoint, q3 = 0

    def __post_init__(self):
        if not self.v1_min < self.v1_max:
            raise ValueError("need v1_min < v1_max")
        if self.tap_step <= 0:
            raise ValueError("tap_step must be > 0")
        if self.band_halfwidth <= 0:
            raise ValueError("band_halfwidth must be > 0")
        if self.strike_threshold <= self.band_halfwidth:
            raise ValueError("strike_threshold must exceed band_halfwidth")
        if self.q3_max < 0:
            raise ValueError("q3_max must be >= 0")
        if self.memory_window < 1:
            raise ValueError("memory_window must be >= 1")
        if not self.p2_range[0] <= self.p2_range[1]:
            raise ValueError("p2_range must be (lo, hi) with lo <= hi")
        if not self.v1_min <= self.v1_start <= self.v1_max:
            raise ValueError("v1_start must lie within [v1_min, v1_max]")
        if not 0 <= self.defender_start_action < DEFENDER_ACTIONS:
            raise ValueError("defender_start_action out of range")
        if not 0 <= self.attacker_start_action < ATTACKER_ACTIONS:
            raise ValueError("attacker_start_action out of range")


class PowerFlow(NamedTuple):
    P2: float
    Q2: float
    P1: float
    Q1: float
    V2: float
    V3: float


@dataclass(frozen=True)
class GridState:
    """One time slice of the circuit: injections, substation voltage, and the
    flows/voltages they determine."""

    p2: float
    q2: float
    p3: float
    q3: float
    V1: float
    P2: float
    Q2: float
    P1: float
    Q1: float
    V2: float
    V3: float


def power_flow(p2: float, q2: float, p3: float, q3: float, v1: float,
               params: GridParams) -> PowerFlow:
    """LinDistFlow: line flows and downstream voltages from injections and V1."""
    p_2 = -p3
    q_2 = -q3
    p_1 = p_2 + p2
    q_1 = q_2 + q2
    v2 = v1 - (params.r1 * p_1 + params.x1 * q_1)
    v3 = v2 - (params.r2 * p_2 + params.x2 * q_2)
    return PowerFlow(p_2, q_2, p_1, q_1, v2, v3)


def make_state(p2: float, q2: float, p3: float, q3: float, v1: float,
               params: GridParams) -> GridState:
    flow = power_flow(p2, q2, p3, q3, v1, params)
    return GridState(p2, q2, p3, q3, v1,
                     flow.P2, flow.Q2, flow.P1, flow.Q1, flow.V2, flow.V3)


# ---------------------------------------------------------------------------
# Decision domains
# ---------------------------------------------------------------------------

def apply_defender_action(v1: float, action: int, params: GridParams) -> float:
    """Next V1 for Down/Hold/Up, clamped to the transformer limits."""
    if action == ACTION_UP:
        return min(params.v1_max, v1 + params.tap_step)
    if action == ACTION_DOWN:
        return max(params.v1_min, v1 - params.tap_step)
    if action == ACTION_HOLD:
        return v1
    raise ValueError(f"unknown defender action {action}")


def defender_move_domain(v1: float, params: GridParams) -> tuple[float, ...]:
    """Reachable V1 values, ascending, duplicates collapsed at the limits."""
    values = {apply_defender_action(v1, a, params)
              for a in (ACTION_DOWN, ACTION_HOLD, ACTION_UP)}
    return tuple(sorted(values))


@lru_cache(maxsize=None)
def _attacker_levels(q3_max: float) -> tuple[float, ...]:
    return tuple(q3_max * (k - 5) / 5.0 for k in range(ATTACKER_ACTIONS))


def attacker_levels(params: GridParams) -> tuple[float, ...]:
    """Eleven equally spaced q3 settings from -q3_max to +q3_max; the midpoint
    (index 5) is exactly zero."""
    return _attacker_levels(params.q3_max)


# ---------------------------------------------------------------------------
# Rewards
# ---------------------------------------------------------------------------

def defender_reward(v2: float, v3: float, params: GridParams) -> float:
    """Quadratic penalty on both downstream voltage deviations; always <= 0."""
    eps = params.band_halfwidth
    return -(((v2 - 1.0) / eps) ** 2) - (((v3 - 1.0) / eps) ** 2)


def attacker_reward(v2: float, params: GridParams) -> float:
    """1 for each strict violation of the good band around V2 (0, 1; the two
    conditions are mutually exclusive, so 2 never occurs)."""
    eps = params.band_halfwidth
    reward = 0.0
    if v2 > 1.0 + eps:
        reward += 1.0
    if v2 < 1.0 - eps:
        reward += 1.0
    return reward


# ---------------------------------------------------------------------------
# Memories
# ---------------------------------------------------------------------------

def _sign(x: float) -> float:
    if x > 0:
        return 1.0
    if x < 0:
        return -1.0
    return 0.0


def defender_memory_metric(v1_history, v3_history, memory_window: int) -> float:
    """Windowed correlation of V1 moves against V3 moves, in [-1, 1].

    Histories are aligned samples ending at the current step; each of the
    m+1 window terms is sign(dV1)*sign(dV3) for one step, terms that reach
    before the start of the history contribute 0, and the sum is always
    divided by m+1.
    """
    if len(v1_history) != len(v3_history):
        raise ValueError("histories must be aligned")
    terms = _windowed_terms(
        len(v1_history), memory_window,
        lambda i: _sign(v1_history[i] - v1_history[i - 1])
        * _sign(v3_history[i] - v3_history[i - 1]))
    return sum(terms) / (memory_window + 1)


def attacker_memory_metric(v3_history, q3_history, params: GridParams) -> int:
    """Windowed count of V3 moves unexplained by the attacker's own q3 moves.

    A step contributes sign(floor((dV3 - dq3 * x2 / v0) / tap_step)): zero
    when V3 moved roughly as the attacker's own injection change predicts,
    +/-1 when something else (a defender tap, in this circuit) shifted it by
    at least one tap step.  Integer-valued, |metric| <= m+1.
    """
    if len(v3_history) != len(q3_history):
        raise ValueError("histories must be aligned")
    terms = _windowed_terms(
        len(v3_history), params.memory_window,
        lambda i: _attacker_term(v3_history[i - 1], v3_history[i],
                                 q3_history[i - 1], q3_history[i], params))
    return int(sum(terms))


def _windowed_terms(length: int, memory_window: int, term_at) -> list[float]:
    first = max(1, length - 1 - memory_window)
    return [term_at(i) for i in range(first, length)]


def _defender_term(v1_prev: float, v1_now: float,
                   v3_prev: float, v3_now: float) -> float:
    return _sign(v1_now - v1_prev) * _sign(v3_now - v3_prev)


def _attacker_term(v3_prev: float, v3_now: float, q3_prev: float, q3_now: float,
                   params: GridParams) -> float:
    residual = (v3_now - v3_prev) - (q3_now - q3_prev) * params.x2 / params.v0
    return _sign(math.floor(residual / params.tap_step))


@dataclass(frozen=True)
class DefenderMemory:
    """Observation (V1, V2, V3, P1, Q1), metric, previous action, and the
    rolling window state needed to advance the metric."""

    v1: float
    v2: float
    v3: float
    p1: float
    q1: float
    metric: float
    prev_action: int
    prev_v1: float
    prev_v3: float
    terms: tuple[float, ...]


@dataclass(frozen=True)
class AttackerMemory:
    """Observation (V2, V3, p3, q3), metric, previous action, and rolling
    window state."""

    v2: float
    v3: float
    p3: float
    q3: float
    metric: int
    prev_action: int
    prev_v3: float
    prev_q3: float
    terms: tuple[float, ...]


def initial_defender_memory(obs: tuple[float, ...],
                            params: GridParams) -> DefenderMemory:
    v1, v2, v3, p1, q1 = obs
    return DefenderMemory(v1, v2, v3, p1, q1,
                          metric=0.0, prev_action=params.defender_start_action,
                          prev_v1=v1, prev_v3=v3,
                          terms=(0.0,) * (params.memory_window + 1))


def initial_attacker_memory(obs: tuple[float, ...],
                            params: GridParams) -> AttackerMemory:
    v2, v3, p3, q3 = obs
    return AttackerMemory(v2, v3, p3, q3,
                          metric=0, prev_action=params.attacker_start_action,
                          prev_v3=v3, prev_q3=q3,
                          terms=(0.0,) * (params.memory_window + 1))


def step_defender_memory(mem: DefenderMemory, obs: tuple[float, ...], action: int,
                         params: GridParams) -> DefenderMemory:
    v1, v2, v3, p1, q1 = obs
    term = _defender_term(mem.prev_v1, v1, mem.prev_v3, v3)
    terms = mem.terms[1:] + (term,)
    return DefenderMemory(v1, v2, v3, p1, q1,
                          metric=sum(terms) / (params.memory_window + 1),
                          prev_action=action, prev_v1=v1, prev_v3=v3, terms=terms)


def step_attacker_memory(mem: AttackerMemory, obs: tuple[float, ...], action: int,
                         params: GridParams) -> AttackerMemory:
    v2, v3, p3, q3 = obs
    term = _attacker_term(mem.prev_v3, v3, mem.prev_q3, q3, params)
    terms = mem.terms[1:] + (term,)
    return AttackerMemory(v2, v3, p3, q3,
                          metric=int(sum(terms)), prev_action=action,
                          prev_v3=v3, prev_q3=q3, terms=terms)


# ---------------------------------------------------------------------------
# Level-0 policies
# ---------------------------------------------------------------------------

def level0_defender(v1: float, v2: float, v3: float, params: GridParams) -> int:
    """Myopic tap control: pick the move whose predicted mean of V2 and V3 is
    closest to 1.0.

    Changing V1 alone shifts V2 and V3 by exactly the same amount (flows do
    not depend on V1), so the one-step prediction is a pure shift.  Ties go to
    the smallest |move|, then to the lower resulting V1.
    """
    best_action = ACTION_DOWN
    best_key = None
    for action in (ACTION_DOWN, ACTION_HOLD, ACTION_UP):
        v1_next = apply_defender_action(v1, action, params)
        shift = v1_next - v1
        deviation = abs((v2 + shift + v3 + shift) / 2.0 - 1.0)
        key = (deviation, abs(shift), v1_next)
        if best_key is None or key < best_key:
            best_key = key
            best_action = action
    return best_action


def level0_attacker(v2: float, q3_current: float, params: GridParams) -> int:
    """Drift-and-strike: creep q3 one grid step per move (up while V2 < 1,
    down otherwise); when some grid setting projects V2 at least
    strike_threshold away from 1.0, jump straight to the most damaging one.

    Projection uses the circuit sensitivity dV2/dq3 = x1.  Drift steps clamp
    at the grid endpoints.
    """
    levels = attacker_levels(params)
    current_index = min(range(ATTACKER_ACTIONS),
                        key=lambda k: abs(levels[k] - q3_current))
    deviations = [abs(v2 + params.x1 * (q - q3_current) - 1.0) for q in levels]
    # max over a range keeps the first argmax, pinning exact ties.
    best_index = max(range(ATTACKER_ACTIONS), key=lambda k: deviations[k])
    if deviations[best_index] > params.strike_threshold:
        return best_index
    if v2 < 1.0:
        return min(current_index + 1, ATTACKER_ACTIONS - 1)
    return max(current_index - 1, 0)


# ---------------------------------------------------------------------------
# Transition
# ---------------------------------------------------------------------------

def initial_state(params: GridParams, rng: np.random.Generator) -> GridState:
    p2 = float(rng.uniform(params.p2_range[0], params.p2_range[1]))
    q3 = attacker_levels(params)[params.attacker_start_action]
    return make_state(p2, params.q2_factor * p2, params.p3, q3,
                      params.v1_start, params)


def advance_state(state: GridState, defender_action: int, attacker_action: int,
                  rng: np.random.Generator, params: GridParams) -> GridState:
    v1 = apply_defender_action(state.V1, defender_action, params)
    q3 = attacker_levels(params)[attacker_action]
    p2 = float(rng.uniform(params.p2_range[0], params.p2_range[1]))
    return make_state(p2, params.q2_factor * p2, params.p3, q3, v1, params)


def transition(state: GridState, memories: tuple[DefenderMemory, AttackerMemory],
               defender_action: int, attacker_action: int,
               rng: np.random.Generator, params: GridParams,
               ) -> tuple[GridState, tuple[DefenderMemory, AttackerMemory],
                          tuple[float, float]]:
    """One step of the battle: apply both actions, redraw the load, run the
    power flow, advance both memories, and score the resulting state."""
    state_next = advance_state(state, defender_action, attacker_action, rng, params)
    d_mem = step_defender_memory(memories[0], defender_observation(state_next),
                                 defender_action, params)
    a_mem = step_attacker_memory(memories[1], attacker_observation(state_next),
                                 attacker_action, params)
    rewards = (defender_reward(state_next.V2, state_next.V3, params),
               attacker_reward(state_next.V2, params))
    return state_next, (d_mem, a_mem), rewards


# ---------------------------------------------------------------------------
# Vector codecs (node values in the net encoding are flat tuples)
# ---------------------------------------------------------------------------

STATE_DIM = 11
_STATE_FIELDS = ("p2", "q2", "p3", "q3", "V1", "P2", "Q2", "P1", "Q1", "V2", "V3")


def state_to_vec(state: GridState) -> tuple[float, ...]:
    return (state.p2, state.q2, state.p3, state.q3, state.V1,
            state.P2, state.Q2, state.P1, state.Q1, state.V2, state.V3)


def state_from_vec(vec) -> GridState:
    return GridState(*vec)


def defender_memory_dim(params: GridParams) -> int:
    return 9 + params.memory_window + 1


def attacker_memory_dim(params: GridParams) -> int:
    return 8 + params.memory_window + 1


def defender_memory_to_vec(mem: DefenderMemory) -> tuple[float, ...]:
    return (mem.v1, mem.v2, mem.v3, mem.p1, mem.q1, mem.metric,
            float(mem.prev_action), mem.prev_v1, mem.prev_v3) + mem.terms


def defender_memory_from_vec(vec) -> DefenderMemory:
    return DefenderMemory(vec[0], vec[1], vec[2], vec[3], vec[4], vec[5],
                          int(vec[6]), vec[7], vec[8], tuple(vec[9:]))


def attacker_memory_to_vec(mem: AttackerMemory) -> tuple[float, ...]:
    return (mem.v2, mem.v3, mem.p3, mem.q3, float(mem.metric),
            float(mem.prev_action), mem.prev_v3, mem.prev_q3) + mem.terms


def attacker_memory_from_vec(vec) -> AttackerMemory:
    return AttackerMemory(vec[0], vec[1], vec[2], vec[3], int(vec[4]),
                          int(vec[5]), vec[6], vec[7], tuple(vec[8:]))


# ---------------------------------------------------------------------------
# Observations and feature encodings
# ---------------------------------------------------------------------------

def defender_observation(state: GridState) -> tuple[float, ...]:
    """(V1, V2, V3, P1, Q1): the SCADA view."""
    return (state.V1, state.V2, state.V3, state.P1, state.Q1)


def attacker_observation(state: GridState) -> tuple[float, ...]:
    """(V2, V3, p3, q3): what the compromised node reveals."""
    return (state.V2, state.V3, state.p3, state.q3)


# Per-feature affine normalization to roughly [-1, 1]:
#   voltages      (v - 1) / 0.1     (tap range is 1.0 +/- 0.1)
#   flows and p3  v / 2
#   q3            v / q3_max        (0 when q3_max = 0)
#   defender metric  as-is          (already in [-1, 1])
#   attacker metric  v / (m + 1)
#   action index  centered at the midpoint, scaled to +/-1

def _norm_voltage(v: float) -> float:
    return (v - 1.0) / 0.1


def _norm_flow(v: float) -> float:
    return v / 2.0


def _norm_action(index: float, count: int) -> float:
    half = (count - 1) / 2.0
    return (index - half) / half if half > 0 else 0.0


def encode_defender_features(mem: DefenderMemory, params: GridParams) -> np.ndarray:
    return np.array([
        _norm_voltage(mem.v1),
        _norm_voltage(mem.v2),
        _norm_voltage(mem.v3),
        _norm_flow(mem.p1),
        _norm_flow(mem.q1),
        mem.metric,
        _norm_action(mem.prev_action, DEFENDER_ACTIONS),
    ])


def encode_attacker_features(mem: AttackerMemory, params: GridParams) -> np.ndarray:
    q3_norm = mem.q3 / params.q3_max if params.q3_max > 0 else 0.0
    return np.array([
        _norm_voltage(mem.v2),
        _norm_voltage(mem.v3),
        _norm_flow(mem.p3),
        q3_norm,
        mem.metric / (params.memory_window + 1),
        _norm_action(mem.prev_action, ATTACKER_ACTIONS),
    ])


DEFENDER_FEATURE_DIM = 7
ATTACKER_FEATURE_DIM = 6


def defender_feature_encoder(params: GridParams) -> FeatureEncoder:
    def encode(parent_values: Mapping) -> np.ndarray:
        mem = defender_memory_from_vec(parent_values["defender_memory"])
        return encode_defender_features(mem, params)
    return FeatureEncoder(DEFENDER_FEATURE_DIM, encode)


def attacker_feature_encoder(params: GridParams) -> FeatureEncoder:
    def encode(parent_values: Mapping) -> np.ndarray:
        mem = attacker_memory_from_vec(parent_values["attacker_memory"])
        return encode_attacker_features(mem, params)
    return FeatureEncoder(ATTACKER_FEATURE_DIM, encode)


def level0_policies(params: GridParams) -> dict[str, PriorPolicy]:
    """The scenario's priors, exposed with the players' feature interfaces."""

    def defender_fn(parent_values, rng):
        mem = defender_memory_from_vec(parent_values["defender_memory"])
        return level0_defender(mem.v1, mem.v2, mem.v3, params)

    def attacker_fn(parent_values, rng):
        mem = attacker_memory_from_vec(parent_values["attacker_memory"])
        return level0_attacker(mem.v2, mem.q3, params)

    return {
        DEFENDER: PriorPolicy("defender_level0", DEFENDER_ACTIONS,
                              defender_feature_encoder(params), defender_fn),
        ATTACKER: PriorPolicy("attacker_level0", ATTACKER_ACTIONS,
                              attacker_feature_encoder(params), attacker_fn),
    }


# ---------------------------------------------------------------------------
# Net encoding
# ---------------------------------------------------------------------------

STATE_NODE = "state"
DEFENDER_OBS_NODE = "defender_obs"
ATTACKER_OBS_NODE = "attacker_obs"
DEFENDER_MEMORY_NODE = "defender_memory"
ATTACKER_MEMORY_NODE = "attacker_memory"
DEFENDER_ACTION_NODE = "defender_action"
ATTACKER_ACTION_NODE = "attacker_action"

V2_INDEX = _STATE_FIELDS.index("V2")
V3_INDEX = _STATE_FIELDS.index("V3")


def as_netform(params: GridParams, horizon: int = DEFAULT_HORIZON) -> IteratedGame:
    """The scenario as an iterated semi Bayes net.

    The kernel slice evolves the state from the previous slice's state and
    actions, projects both observations, advances both memories, and exposes
    one decision node per player.  The base slice supplies the initial state,
    empty memories, and the fixed start actions; the binding threads state,
    memories, and actions forward.  Kernels delegate to the same functions the
    native `transition` loop uses, so the two paths match bit for bit.
    """
    state_space = RealVector(STATE_DIM)
    d_mem_space = RealVector(defender_memory_dim(params))
    a_mem_space = RealVector(attacker_memory_dim(params))
    d_act_space = FiniteDiscrete(DEFENDER_ACTIONS)
    a_act_space = FiniteDiscrete(ATTACKER_ACTIONS)
    prev = "_prev"

    def state_kernel(parents, rng):
        state = advance_state(state_from_vec(parents[STATE_NODE + prev]),
                              int(parents[DEFENDER_ACTION_NODE + prev]),
                              int(parents[ATTACKER_ACTION_NODE + prev]),
                              rng, params)
        return state_to_vec(state)

    def defender_obs_kernel(parents, rng):
        return defender_observation(state_from_vec(parents[STATE_NODE]))

    def attacker_obs_kernel(parents, rng):
        return attacker_observation(state_from_vec(parents[STATE_NODE]))

    def defender_memory_kernel(parents, rng):
        mem = step_defender_memory(
            defender_memory_from_vec(parents[DEFENDER_MEMORY_NODE + prev]),
            parents[DEFENDER_OBS_NODE],
            int(parents[DEFENDER_ACTION_NODE + prev]), params)
        return defender_memory_to_vec(mem)

    def attacker_memory_kernel(parents, rng):
        mem = step_attacker_memory(
            attacker_memory_from_vec(parents[ATTACKER_MEMORY_NODE + prev]),
            parents[ATTACKER_OBS_NODE],
            int(parents[ATTACKER_ACTION_NODE + prev]), params)
        return attacker_memory_to_vec(mem)

    kernel = SemiBayesNet([
        chance(STATE_NODE + prev, state_space, boundary_kernel(STATE_NODE + prev)),
        chance(DEFENDER_MEMORY_NODE + prev, d_mem_space,
               boundary_kernel(DEFENDER_MEMORY_NODE + prev)),
        chance(ATTACKER_MEMORY_NODE + prev, a_mem_space,
               boundary_kernel(ATTACKER_MEMORY_NODE + prev)),
        chance(DEFENDER_ACTION_NODE + prev, d_act_space,
               boundary_kernel(DEFENDER_ACTION_NODE + prev)),
        chance(ATTACKER_ACTION_NODE + prev, a_act_space,
               boundary_kernel(ATTACKER_ACTION_NODE + prev)),
        chance(STATE_NODE, state_space, state_kernel,
               parents=(STATE_NODE + prev, DEFENDER_ACTION_NODE + prev,
                        ATTACKER_ACTION_NODE + prev)),
        chance(DEFENDER_OBS_NODE, RealVector(5), defender_obs_kernel,
               parents=(STATE_NODE,)),
        chance(ATTACKER_OBS_NODE, RealVector(4), attacker_obs_kernel,
               parents=(STATE_NODE,)),
        chance(DEFENDER_MEMORY_NODE, d_mem_space, defender_memory_kernel,
               parents=(DEFENDER_OBS_NODE, DEFENDER_MEMORY_NODE + prev,
                        DEFENDER_ACTION_NODE + prev)),
        chance(ATTACKER_MEMORY_NODE, a_mem_space, attacker_memory_kernel,
               parents=(ATTACKER_OBS_NODE, ATTACKER_MEMORY_NODE + prev,
                        ATTACKER_ACTION_NODE + prev)),
        decision(DEFENDER_ACTION_NODE, d_act_space, DEFENDER,
                 parents=(DEFENDER_MEMORY_NODE,)),
        decision(ATTACKER_ACTION_NODE, a_act_space, ATTACKER,
                 parents=(ATTACKER_MEMORY_NODE,)),
    ])

    def initial_state_kernel(parents, rng):
        return state_to_vec(initial_state(params, rng))

    def initial_defender_memory_kernel(parents, rng):
        obs = defender_observation(state_from_vec(parents[STATE_NODE]))
        return defender_memory_to_vec(initial_defender_memory(obs, params))

    def initial_attacker_memory_kernel(parents, rng):
        obs = attacker_observation(state_from_vec(parents[STATE_NODE]))
        return attacker_memory_to_vec(initial_attacker_memory(obs, params))

    base = SemiBayesNet([
        chance(STATE_NODE, state_space, initial_state_kernel),
        chance(DEFENDER_MEMORY_NODE, d_mem_space, initial_defender_memory_kernel,
               parents=(STATE_NODE,)),
        chance(ATTACKER_MEMORY_NODE, a_mem_space, initial_attacker_memory_kernel,
               parents=(STATE_NODE,)),
        chance(DEFENDER_ACTION_NODE, d_act_space,
               constant_kernel(params.defender_start_action)),
        chance(ATTACKER_ACTION_NODE, a_act_space,
               constant_kernel(params.attacker_start_action)),
    ])

    binding = GlueBinding({
        STATE_NODE: STATE_NODE + prev,
        DEFENDER_MEMORY_NODE: DEFENDER_MEMORY_NODE + prev,
        ATTACKER_MEMORY_NODE: ATTACKER_MEMORY_NODE + prev,
        DEFENDER_ACTION_NODE: DEFENDER_ACTION_NODE + prev,
        ATTACKER_ACTION_NODE: ATTACKER_ACTION_NODE + prev,
    })

    rewards = {
        DEFENDER: lambda inst: defender_reward(inst[STATE_NODE][V2_INDEX],
                                               inst[STATE_NODE][V3_INDEX], params),
        ATTACKER: lambda inst: attacker_reward(inst[STATE_NODE][V2_INDEX], params),
    }
    return IteratedGame(base, kernel, binding, horizon, rewards)


# ---------------------------------------------------------------------------
# Native loop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StepRecord:
    t: int
    state: GridState
    defender_memory: DefenderMemory
    attacker_memory: AttackerMemory
    defender_reward: float
    attacker_reward: float


def simulate(params: GridParams, policies: Mapping[str, netform.Policy],
             horizon: int, rng: np.random.Generator) -> list[StepRecord]:
    """Run the battle without the net machinery.

    Policies receive the same parent-value mapping they would see as decision
    nodes, and randomness is consumed in the same order as `netform.rollout`
    on `as_netform`, so seeded trajectories from the two paths are identical.
    """
    state = initial_state(params, rng)
    memories = (initial_defender_memory(defender_observation(state), params),
                initial_attacker_memory(attacker_observation(state), params))
    d_action = params.defender_start_action
    a_action = params.attacker_start_action
    records = []
    for t in range(1, horizon + 1):
        state, memories, rewards = transition(state, memories, d_action, a_action,
                                              rng, params)
        d_action = int(policies[DEFENDER](
            {DEFENDER_MEMORY_NODE: defender_memory_to_vec(memories[0])}, rng))
        a_action = int(policies[ATTACKER](
            {ATTACKER_MEMORY_NODE: attacker_memory_to_vec(memories[1])}, rng))
        records.append(StepRecord(t, state, memories[0], memories[1],
                                  rewards[0], rewards[1]))
    return records
