"""Episodic refinement of planar pose graphs by bounded retraction actions.

An episode walks a planar graph's binary edges: each action names an edge and
a bounded SE(2) tangent, the tangent retracts the edge's later endpoint (the
one with the larger variable id), and the reward is the decrease in the
log-weighted orientation cost. Because that cost is purely rotational, only
the yaw component of an action can change it; translation components move
poses without affecting the reward.

Observations are built by a message-passing edge encoder: a linear embedding
of per-edge features (rotation residual, squared world-frame translation
residual, log-baseline weight, loop-closure flag), then K rounds in which
each edge mixes the mean embedding of edges sharing one of its endpoints
through a tanh, finally mean-pooled over edges. Policies receive the
environment state and derive embeddings with their own encoder parameters.

Shipped policies: a greedy one-step lookahead over a fixed set of yaw
templates (never worsens the cost, guard or not), a uniform random policy,
and a linear policy (edge chosen by a learned score over embeddings, tangent
by a bounded tanh head) trainable with the cross-entropy method or REINFORCE
with a moving-average baseline. Trained parameters serialize to a flat
little-endian binary file with magic "MRVP".
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import lie
from .errors import (EpisodeOver, InvalidEdge, MalformedHeader,
                     NonPlanarGraph, TruncatedPayload)
from .graph import FactorKind, GraphBuilder, GraphValues, PoseGraph
from .solver import WeightingParams, orientation_cost_log

EMBED_DIM = 16
ENCODER_ROUNDS = 3
TRANS_BOUND = 0.5   # meters, per tangent component
ROT_BOUND = 0.2     # radians
EPISODE_BUDGET = 64

_ACTION_BOUNDS = np.array([TRANS_BOUND, TRANS_BOUND, ROT_BOUND])

_MAGIC = b"MRVP"
_FORMAT_VERSION = 1
_METHOD_TAGS = {"init": 0, "cem": 1, "reinforce": 2}
_TAG_METHODS = {v: k for k, v in _METHOD_TAGS.items()}

# magnitudes a greedy step can take; dyadic-ish ladder so short sums of
# templates can cancel any yaw offset within the action bound
_GREEDY_MAGNITUDES = (0.2, 0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001)

_HELD_OUT_BASE = 1_000_000
_HELD_OUT_COUNT = 20


# ---------------------------------------------------------------------------
# Features and encoder
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EdgeFeature:
    rot_residual: float      # radians, in [0, pi]
    trans_residual: float    # squared meters, >= 0
    weight: float            # log-baseline weight w_ij
    is_loop_closure: bool

    def vector(self) -> np.ndarray:
        return np.array([self.rot_residual, self.trans_residual, self.weight,
                         float(self.is_loop_closure)])


def edge_list(g: PoseGraph) -> list:
    return g.binary_factors()


def edge_features(g: PoseGraph, values: GraphValues,
                  params: WeightingParams | None = None) -> list[EdgeFeature]:
    """Per-edge features over binary factors, in document order."""
    params = params or WeightingParams()
    if g.dimension != "planar":
        raise NonPlanarGraph("edge features are defined on planar graphs")
    edges = edge_list(g)
    t_norms = [math.hypot(f.measurement.x, f.measurement.y) for f in edges]
    t_mean = sum(t_norms) / len(t_norms) if edges else 0.0
    feats = []
    for f, tn in zip(edges, t_norms):
        w = 1.0 + params.beta * math.log(tn / t_mean + params.epsilon) \
            if t_mean > 0 else 1.0
        w = max(w, params.clamp_floor)
        pi = values.pose(f.endpoints[0])
        pj = values.pose(f.endpoints[1])
        rot = abs(lie.wrap_angle(pi.rot.theta + f.measurement.rot.theta
                                 - pj.rot.theta))
        pred = pi.transform(np.array([f.measurement.x, f.measurement.y]))
        trans = float(np.sum((pred - np.array([pj.x, pj.y])) ** 2))
        feats.append(EdgeFeature(rot, trans, w,
                                 f.kind == FactorKind.LOOP_CLOSURE))
    return feats


@dataclass(frozen=True)
class EncoderParams:
    w_in: np.ndarray    # (D, 4)
    w_self: np.ndarray  # (D, D)
    w_nbr: np.ndarray   # (D, D)

    @property
    def dim(self) -> int:
        return self.w_in.shape[0]

    @staticmethod
    def zeros(dim: int = EMBED_DIM) -> "EncoderParams":
        return EncoderParams(np.zeros((dim, 4)), np.zeros((dim, dim)),
                             np.zeros((dim, dim)))

    @staticmethod
    def flat_count(dim: int) -> int:
        return 4 * dim + 2 * dim * dim

    @staticmethod
    def from_flat(flat: np.ndarray, dim: int) -> "EncoderParams":
        a, b = 4 * dim, 4 * dim + dim * dim
        return EncoderParams(flat[:a].reshape(dim, 4),
                             flat[a:b].reshape(dim, dim),
                             flat[b:b + dim * dim].reshape(dim, dim))

    def to_flat(self) -> np.ndarray:
        return np.concatenate([self.w_in.ravel(), self.w_self.ravel(),
                               self.w_nbr.ravel()])


def _edge_neighbors(edges) -> list[np.ndarray]:
    by_endpoint: dict[int, list[int]] = {}
    for k, f in enumerate(edges):
        for v in f.endpoints:
            by_endpoint.setdefault(v.index, []).append(k)
    nbrs = []
    for k, f in enumerate(edges):
        seen = set()
        for v in f.endpoints:
            seen.update(by_endpoint[v.index])
        seen.discard(k)
        nbrs.append(np.array(sorted(seen), dtype=int))
    return nbrs


def encode_graph(g: PoseGraph, values: GraphValues, rounds: int = ENCODER_ROUNDS,
                 params: EncoderParams | None = None,
                 weighting: WeightingParams | None = None):
    """Message-passing edge embeddings plus their mean-pooled summary.

    rounds = 0 returns the bare linear feature projection. Each round mixes
    the mean embedding of edges sharing an endpoint through a tanh; the
    pooled vector is the mean over edges, so relabeling edges permutes the
    per-edge embeddings and leaves the pooled vector unchanged.
    """
    if rounds < 0:
        raise ValueError(f"rounds must be >= 0, got {rounds}")
    params = params or EncoderParams.zeros()
    feats = edge_features(g, values, weighting)
    if not feats:
        return np.zeros((0, params.dim)), np.zeros(params.dim)
    f_mat = np.stack([f.vector() for f in feats])
    h = f_mat @ params.w_in.T
    if rounds > 0:
        nbrs = _edge_neighbors(edge_list(g))
        for _ in range(rounds):
            mixed = np.zeros_like(h)
            for k, nb in enumerate(nbrs):
                if nb.size:
                    mixed[k] = h[nb].mean(axis=0)
            h = np.tanh(h @ params.w_self.T + mixed @ params.w_nbr.T)
    return h, h.mean(axis=0)


# ---------------------------------------------------------------------------
# Environment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RefineAction:
    edge_index: int
    tangent: np.ndarray  # (dx, dy, dtheta)

    def __post_init__(self):
        t = np.asarray(self.tangent, dtype=float).reshape(3)
        if (abs(t[0]) > TRANS_BOUND + 1e-12 or abs(t[1]) > TRANS_BOUND + 1e-12
                or abs(t[2]) > ROT_BOUND + 1e-12):
            raise ValueError(f"action tangent {t} exceeds bounds "
                             f"(+-{TRANS_BOUND} m, +-{ROT_BOUND} rad)")
        object.__setattr__(self, "tangent", t)


@dataclass(frozen=True)
class EnvState:
    graph: PoseGraph
    values: GraphValues
    step: int = 0
    budget: int = EPISODE_BUDGET
    seed: int = 0
    weighting: WeightingParams | None = None


def state_cost(s: EnvState) -> float:
    return orientation_cost_log(s.graph, s.values, s.weighting)


def env_step(s: EnvState, a: RefineAction):
    """Apply one retraction; returns (next state, reward, done).

    The target is the endpoint with the larger variable id. Reward is the
    orientation-cost decrease; values are copied, never mutated in place.
    """
    if s.step >= s.budget:
        raise EpisodeOver(f"episode budget {s.budget} exhausted")
    edges = edge_list(s.graph)
    if not 0 <= a.edge_index < len(edges):
        raise InvalidEdge(f"edge index {a.edge_index} out of range "
                          f"[0, {len(edges)})")
    target = max(edges[a.edge_index].endpoints, key=lambda v: v.index)
    before = state_cost(s)
    values = s.values.copy()
    values.poses[target.index] = lie.retract(values.pose(target), a.tangent)
    s2 = replace(s, values=values, step=s.step + 1)
    reward = before - state_cost(s2)
    return s2, reward, s2.step >= s.budget


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------


class Policy:
    """Interface: act() must be deterministic given the construction seed."""

    def act(self, state: EnvState) -> RefineAction:
        raise NotImplementedError

    def learn(self, transitions):
        pass


class GreedyPolicy(Policy):
    """One-step lookahead over fixed yaw templates; never worsens the cost.

    Templates are rotation-only because the objective ignores translation.
    Falls back to a zero action when no candidate improves.
    """

    def __init__(self, magnitudes=_GREEDY_MAGNITUDES):
        self.magnitudes = tuple(magnitudes)

    def act(self, state: EnvState) -> RefineAction:
        edges = edge_list(state.graph)
        base = state_cost(state)
        best = (base, 0, np.zeros(3))
        for k, f in enumerate(edges):
            target = max(f.endpoints, key=lambda v: v.index)
            pose = state.values.pose(target)
            for mag in self.magnitudes:
                for sign in (1.0, -1.0):
                    tangent = np.array([0.0, 0.0, sign * mag])
                    trial = state.values.copy()
                    trial.poses[target.index] = lie.retract(pose, tangent)
                    cost = orientation_cost_log(state.graph, trial,
                                                state.weighting)
                    if cost < best[0]:
                        best = (cost, k, tangent)
        return RefineAction(best[1], best[2])


class RandomPolicy(Policy):
    """Uniform edge and uniform in-bounds tangent from a seeded stream."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._rng = np.random.default_rng(seed)

    def act(self, state: EnvState) -> RefineAction:
        k = int(self._rng.integers(len(edge_list(state.graph))))
        tangent = self._rng.uniform(-1.0, 1.0, 3) * _ACTION_BOUNDS
        return RefineAction(k, tangent)


def param_count(dim: int = EMBED_DIM) -> int:
    # encoder (2 D^2 + 4 D) + edge score (D) + head (3 * 2D + 3)
    return 2 * dim * dim + 11 * dim + 3


def _dim_from_count(count: int) -> int:
    disc = 121 + 8 * (count - 3)
    if disc < 0:
        raise MalformedHeader(f"parameter count {count} matches no dimension")
    root = math.isqrt(disc)
    if root * root != disc or (root - 11) % 4 != 0 or root <= 11:
        raise MalformedHeader(f"parameter count {count} matches no dimension")
    return (root - 11) // 4


class LinearPolicy(Policy):
    """Linear edge score over embeddings plus a bounded tanh tangent head."""

    def __init__(self, params: np.ndarray, dim: int = EMBED_DIM,
                 rounds: int = ENCODER_ROUNDS):
        params = np.asarray(params, dtype=float).ravel()
        if params.size != param_count(dim):
            raise ValueError(f"expected {param_count(dim)} parameters for "
                             f"dimension {dim}, got {params.size}")
        self.params = params.copy()
        self.dim = dim
        self.rounds = rounds

    @staticmethod
    def random(seed: int = 0, dim: int = EMBED_DIM,
               rounds: int = ENCODER_ROUNDS) -> "LinearPolicy":
        rng = np.random.default_rng(seed)
        return LinearPolicy(rng.normal(0.0, 0.1, param_count(dim)), dim, rounds)

    def _split(self):
        d = self.dim
        enc_n = EncoderParams.flat_count(d)
        enc = EncoderParams.from_flat(self.params[:enc_n], d)
        u = self.params[enc_n:enc_n + d]
        a = self.params[enc_n + d:enc_n + d + 6 * d].reshape(3, 2 * d)
        c = self.params[enc_n + 7 * d:enc_n + 7 * d + 3]
        return enc, u, a, c

    def _forward(self, state: EnvState):
        enc, u, a, c = self._split()
        emb, pooled = encode_graph(state.graph, state.values, self.rounds,
                                   enc, state.weighting)
        scores = emb @ u
        return emb, pooled, scores, a, c

    def act(self, state: EnvState) -> RefineAction:
        emb, pooled, scores, a, c = self._forward(state)
        k = int(np.argmax(scores))
        z = a @ np.concatenate([emb[k], pooled]) + c
        return RefineAction(k, _ACTION_BOUNDS * np.tanh(z))


# ---------------------------------------------------------------------------
# Guarded refinement
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RefineReport:
    initial_cost: float
    final_cost: float
    costs: list[float] = field(default_factory=list)
    steps: int = 0
    rolled_back: int = 0


def refine(g: PoseGraph, values: GraphValues, policy: Policy, budget: int,
           guard: bool = True, weighting: WeightingParams | None = None):
    """Run up to `budget` policy steps; with guard on, worsening steps are
    rolled back so the cost trace is non-increasing. Returns (values, report).
    """
    if budget < 0:
        raise ValueError(f"budget must be >= 0, got {budget}")
    state = EnvState(g, values.copy(), step=0, budget=max(budget, 1),
                     weighting=weighting)
    costs = [state_cost(state)]
    rolled_back = 0
    for _ in range(budget):
        action = policy.act(state)
        nxt, reward, _ = env_step(state, action)
        if guard and reward < 0:
            nxt = replace(nxt, values=state.values)
            rolled_back += 1
        state = nxt
        costs.append(state_cost(state))
    return state.values, RefineReport(costs[0], costs[-1], costs, budget,
                                      rolled_back)


def rollout(state: EnvState, policy: Policy) -> float:
    """Unguarded episode from `state` to its budget; returns the total reward."""
    total = 0.0
    done = state.step >= state.budget
    while not done:
        state, reward, done = env_step(state, policy.act(state))
        total += reward
    return total


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def make_training_env_factory(n_poses: int = 3, budget: int = 8,
                              noise_low: float = 0.05,
                              noise_high: float = 0.2,
                              weighting: WeightingParams | None = None):
    """Chains with a positive-biased yaw perturbation on the last pose.

    The bias gives trainable policies a consistent correction to discover;
    the magnitude varies per seed so the tangent head has to read the
    rotation-residual feature rather than memorize one constant.
    """

    def factory(seed: int) -> EnvState:
        rng = np.random.default_rng(seed)
        gt = [lie.Pose2(float(k), 0.0, lie.Rot2(0.0)) for k in range(n_poses)]
        b = GraphBuilder("planar")
        delta = float(rng.uniform(noise_low, noise_high))
        for k, p in enumerate(gt):
            init = p if k < n_poses - 1 else lie.retract(
                p, np.array([0.0, 0.0, delta]))
            b.add_pose(k, init)
        info = 10.0 * np.eye(3)
        for k in range(n_poses - 1):
            b.add_odometry(k, k + 1, lie.between(gt[k], gt[k + 1]), info)
        b.add_anchor(0, gt[0], 100.0 * np.eye(3))
        g = b.build()
        return EnvState(g, g.initial_values(), step=0, budget=budget,
                        seed=seed, weighting=weighting)

    return factory


def held_out_states(env_factory, count: int = _HELD_OUT_COUNT) -> list[EnvState]:
    return [env_factory(_HELD_OUT_BASE + k) for k in range(count)]


def evaluate_margin(policy: Policy, env_factory,
                    count: int = _HELD_OUT_COUNT):
    """Paired mean return difference of `policy` over a seeded random policy."""
    diffs, pol_returns, rnd_returns = [], [], []
    for state in held_out_states(env_factory, count):
        rp = rollout(state, policy)
        rr = rollout(state, RandomPolicy(seed=state.seed))
        pol_returns.append(rp)
        rnd_returns.append(rr)
        diffs.append(rp - rr)
    return (float(np.mean(diffs)), float(np.mean(pol_returns)),
            float(np.mean(rnd_returns)))


@dataclass(frozen=True)
class TrainReport:
    method: str
    iters: int
    margin: float
    policy_return: float
    random_return: float
    trace: list[float] = field(default_factory=list)


def _train_cem(env_factory, iters: int, seed: int, dim: int, rounds: int,
               population: int = 32, elite: int = 8, train_episodes: int = 12,
               init_std: float = 0.2, std_floor: float = 0.02):
    rng = np.random.default_rng(seed)
    n = param_count(dim)
    mean = rng.normal(0.0, 0.1, n)
    std = np.full(n, init_std)
    # a fixed training set keeps candidate scores comparable across
    # generations; held-out evaluation still checks generalization
    train_seeds = [int(x) for x in rng.integers(0, 2**31 - 1, train_episodes)]
    trace = []
    for _ in range(iters):
        noise = rng.standard_normal((population, n))
        scores = np.empty(population)
        for c in range(population):
            policy = LinearPolicy(mean + std * noise[c], dim, rounds)
            scores[c] = np.mean([rollout(env_factory(s), policy)
                                 for s in train_seeds])
        top = np.argsort(scores)[::-1][:elite]
        elite_params = mean + std * noise[top]
        mean = elite_params.mean(axis=0)
        std = np.maximum(elite_params.std(axis=0), std_floor)
        trace.append(float(scores[top].mean()))
    return LinearPolicy(mean, dim, rounds), trace


def _train_reinforce(env_factory, iters: int, seed: int, dim: int, rounds: int,
                     batch: int = 8, lr: float = 0.05, sigma: float = 0.1,
                     baseline_alpha: float = 0.2):
    rng = np.random.default_rng(seed)
    n = param_count(dim)
    params = rng.normal(0.0, 0.1, n)
    enc_n = EncoderParams.flat_count(dim)
    baseline = 0.0
    trace = []
    for it in range(iters):
        grads = np.zeros(n)
        returns = []
        for _ in range(batch):
            state = env_factory(int(rng.integers(0, 2**31 - 1)))
            policy = LinearPolicy(params, dim, rounds)
            g_u = np.zeros(dim)
            g_a = np.zeros((3, 2 * dim))
            g_c = np.zeros(3)
            total = 0.0
            done = state.step >= state.budget
            while not done:
                emb, pooled, scores, a_mat, c = policy._forward(state)
                p = np.exp(scores - scores.max())
                p /= p.sum()
                k = int(rng.choice(len(p), p=p))
                x = np.concatenate([emb[k], pooled])
                z_mu = a_mat @ x + c
                zeta = z_mu + sigma * rng.standard_normal(3)
                action = RefineAction(k, _ACTION_BOUNDS * np.tanh(zeta))
                state, reward, done = env_step(state, action)
                total += reward
                g_u += emb[k] - p @ emb
                dz = (zeta - z_mu) / sigma**2
                g_a += np.outer(dz, x)
                g_c += dz
            adv = total - baseline
            grads[enc_n:enc_n + dim] += adv * g_u
            grads[enc_n + dim:enc_n + 7 * dim] += adv * g_a.ravel()
            grads[enc_n + 7 * dim:] += adv * g_c
            returns.append(total)
        params = params + lr * grads / batch
        baseline = ((1 - baseline_alpha) * baseline
                    + baseline_alpha * float(np.mean(returns)))
        trace.append(float(np.mean(returns)))
    return LinearPolicy(params, dim, rounds), trace


def train_policy(env_factory=None, method: str = "cem", iters: int = 30,
                 seed: int = 0, dim: int = EMBED_DIM,
                 rounds: int = ENCODER_ROUNDS, **kwargs):
    """Train a linear policy; returns (policy, TrainReport with the achieved
    held-out margin). Zero iters returns the seeded initial policy verbatim.
    """
    if method not in ("cem", "reinforce"):
        raise ValueError(f"method must be 'cem' or 'reinforce', got {method!r}")
    env_factory = env_factory or make_training_env_factory()
    if method == "cem":
        policy, trace = _train_cem(env_factory, iters, seed, dim, rounds,
                                   **kwargs)
    else:
        policy, trace = _train_reinforce(env_factory, iters, seed, dim,
                                         rounds, **kwargs)
    margin, pol_ret, rnd_ret = evaluate_margin(policy, env_factory)
    return policy, TrainReport(method, iters, margin, pol_ret, rnd_ret, trace)


# ---------------------------------------------------------------------------
# Policy file format
# ---------------------------------------------------------------------------


def policy_to_bytes(policy: LinearPolicy, method: str = "init") -> bytes:
    if method not in _METHOD_TAGS:
        raise ValueError(f"unknown method {method!r}")
    header = struct.pack("<4sIIQ", _MAGIC, _FORMAT_VERSION,
                         _METHOD_TAGS[method], policy.params.size)
    return header + policy.params.astype("<f8").tobytes()


def policy_from_bytes(data: bytes):
    """Parse a policy file; returns (LinearPolicy, method name)."""
    if len(data) < 20:
        raise MalformedHeader(f"policy file too short: {len(data)} bytes")
    magic, version, tag, count = struct.unpack("<4sIIQ", data[:20])
    if magic != _MAGIC:
        raise MalformedHeader(f"bad magic {magic!r}, expected {_MAGIC!r}")
    if version != _FORMAT_VERSION:
        raise MalformedHeader(f"unsupported format version {version}")
    if tag not in _TAG_METHODS:
        raise MalformedHeader(f"unknown method tag {tag}")
    dim = _dim_from_count(count)
    need = 20 + 8 * count
    if len(data) < need:
        raise TruncatedPayload(f"expected {need} bytes, got {len(data)}")
    params = np.frombuffer(data[20:need], dtype="<f8").astype(float)
    return LinearPolicy(params, dim), _TAG_METHODS[tag]


def save_policy(policy: LinearPolicy, path, method: str = "init") -> None:
    with open(path, "wb") as fh:
        fh.write(policy_to_bytes(policy, method))


def load_policy(path):
    with open(path, "rb") as fh:
        return policy_from_bytes(fh.read())
