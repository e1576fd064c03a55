"""Exact finite-MDP counterpart of the neural algorithm.

Everything here is computed to solver precision: policy evaluation by linear
solve, the buffer-restricted optimal policy by policy iteration over the
dataset's action support, and the constrained improvement step in closed
form. These are the oracles the property and acceptance suites lean on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .envs import TabularMdp
from .errors import CoverageError, DimensionError, FormatError, NumericError

Array = np.ndarray


@dataclass
class TabularDataset:
    """Per-state action support with visit counts; zero rows are uncovered."""

    counts: Array  # (S, A) int64

    @classmethod
    def empty(cls, n_states: int, n_actions: int) -> "TabularDataset":
        return cls(np.zeros((n_states, n_actions), dtype=np.int64))

    @classmethod
    def from_pairs(cls, n_states: int, n_actions: int, pairs) -> "TabularDataset":
        ds = cls.empty(n_states, n_actions)
        for s, a, *rest in pairs:
            ds.add(int(s), int(a), int(rest[0]) if rest else 1)
        return ds

    @classmethod
    def full(cls, n_states: int, n_actions: int) -> "TabularDataset":
        return cls(np.ones((n_states, n_actions), dtype=np.int64))

    def add(self, state: int, action: int, count: int = 1) -> None:
        if count < 1:
            raise DimensionError("count must be >= 1")
        self.counts[state, action] += count

    @property
    def support(self) -> Array:
        return self.counts > 0

    def covered_states(self) -> Array:
        return np.flatnonzero(self.support.any(axis=1))

    def uncovered_states(self) -> Array:
        return np.flatnonzero(~self.support.any(axis=1))

    def pairs(self) -> list[tuple[int, int]]:
        return [(int(s), int(a)) for s, a in zip(*np.nonzero(self.support))]

    def frequencies(self) -> Array:
        """Empirical action distribution per covered state."""
        totals = self.counts.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore"):
            freq = np.where(totals > 0, self.counts / np.maximum(totals, 1), 0.0)
        return freq

    def copy(self) -> "TabularDataset":
        return TabularDataset(self.counts.copy())


@dataclass
class TabularPolicy:
    """Row-stochastic action probabilities."""

    probs: Array  # (S, A)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 2:
            raise DimensionError("policy table must be 2-D (states x actions)")
        if np.any(p < 0) or np.max(np.abs(p.sum(axis=1) - 1.0)) > 1e-12:
            raise DimensionError("policy rows must be non-negative and sum to 1 within 1e-12")
        self.probs = p

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "TabularPolicy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def deterministic(cls, actions, n_actions: int) -> "TabularPolicy":
        probs = np.zeros((len(actions), n_actions))
        probs[np.arange(len(actions)), actions] = 1.0
        return cls(probs)

    def greedy_actions(self) -> Array:
        return self.probs.argmax(axis=1)


# --------------------------------------------------------------- evaluation

def bellman_expectation(mdp: TabularMdp, policy: TabularPolicy, q: Array) -> Array:
    """One application of the Bellman expectation operator to a Q-table."""
    v_next = (policy.probs * q).sum(axis=1)
    return mdp.rewards + mdp.gamma * mdp.transitions @ v_next


def exact_policy_evaluation(mdp: TabularMdp, policy: TabularPolicy) -> tuple[Array, Array]:
    """Fixed point of the expectation operator via direct linear solve."""
    if policy.probs.shape != (mdp.n_states, mdp.n_actions):
        raise DimensionError("policy table does not match the MDP")
    p_pi = np.einsum("sa,sat->st", policy.probs, mdp.transitions)
    r_pi = (policy.probs * mdp.rewards).sum(axis=1)
    v = np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * p_pi, r_pi)
    q = mdp.rewards + mdp.gamma * mdp.transitions @ v
    return q, v


def value_iteration(mdp: TabularMdp, tol: float = 1e-13, max_iter: int = 1_000_000) -> tuple[Array, Array]:
    """Optimal Q*/V* oracle; iterates until the sup-norm update is below tol."""
    v = np.zeros(mdp.n_states)
    for _ in range(max_iter):
        q = mdp.rewards + mdp.gamma * mdp.transitions @ v
        v_new = q.max(axis=1)
        if np.max(np.abs(v_new - v)) < tol:
            return q, v_new
        v = v_new
    raise NumericError("value iteration failed to converge")


# ---------------------------------------------------- dataset-restricted optimum

def reachable_states(mdp: TabularMdp) -> Array:
    """States reachable from the initial distribution under any action sequence."""
    frontier = set(np.flatnonzero(mdp.initial_dist > 0).tolist())
    seen = set(frontier)
    while frontier:
        nxt = set()
        for s in frontier:
            for a in range(mdp.n_actions):
                nxt.update(np.flatnonzero(mdp.transitions[s, a] > 0).tolist())
        frontier = nxt - seen
        seen |= frontier
    return np.array(sorted(seen), dtype=np.int64)


def offline_optimal_policy(mdp: TabularMdp, dataset: TabularDataset) -> TabularPolicy:
    """Best deterministic policy whose actions stay inside the dataset support.

    Computed by policy iteration restricted to supported actions; argmax ties
    break toward the lowest action index. Uncovered unreachable states get a
    uniform policy (they cannot influence reachable values); an uncovered
    reachable state is a coverage error.
    """
    support = dataset.support
    covered = support.any(axis=1)
    for s in reachable_states(mdp):
        if not covered[s]:
            raise CoverageError(f"reachable state {int(s)} has no dataset support")

    probs = np.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions)
    for s in range(mdp.n_states):
        if covered[s]:
            probs[s] = 0.0
            probs[s, int(np.argmax(support[s]))] = 1.0
    policy = TabularPolicy(probs)

    for _ in range(1000):
        q, _ = exact_policy_evaluation(mdp, policy)
        new_probs = policy.probs.copy()
        for s in range(mdp.n_states):
            if not covered[s]:
                continue
            masked = np.where(support[s], q[s], -np.inf)
            best = int(np.argmax(masked))  # argmax takes the lowest index on ties
            new_probs[s] = 0.0
            new_probs[s, best] = 1.0
        if np.array_equal(new_probs, policy.probs):
            return policy
        policy = TabularPolicy(new_probs)
    raise NumericError("restricted policy iteration did not stabilize")


# ------------------------------------------------------- constrained improvement

def closed_form_improvement(
    mu: TabularPolicy,
    q_pi: Array,
    beta: float,
    gate: Array,
) -> TabularPolicy:
    """Improvement step: exponential tilt of mu at gated states, greedy elsewhere.

    At gated states the new policy is proportional to mu(a|s) * exp(beta *
    Q(s,a)), renormalized over mu's support (actions outside the support keep
    zero mass). At ungated states it is the one-hot argmax of Q over all
    actions. `beta` is the inverse temperature absorbing the Lagrange scale.
    """
    if beta <= 0:
        raise NumericError(f"inverse temperature must be positive, got {beta}")
    q_pi = np.asarray(q_pi, dtype=np.float64)
    gate = np.asarray(gate, dtype=bool)
    n_states, n_actions = q_pi.shape
    probs = np.zeros((n_states, n_actions))
    for s in range(n_states):
        if gate[s]:
            support = mu.probs[s] > 0.0
            # subtract the per-state max before exponentiating for stability
            shifted = beta * (q_pi[s] - q_pi[s][support].max())
            w = np.where(support, mu.probs[s] * np.exp(shifted), 0.0)
            z = w.sum()
            if not np.isfinite(z) or z <= 0.0:
                raise NumericError(f"degenerate normalizer at state {s}")
            probs[s] = w / z
        else:
            probs[s, int(np.argmax(q_pi[s]))] = 1.0
    return TabularPolicy(probs)


# -------------------------------------------------------------- full iteration

@dataclass
class IterationRecord:
    """One step of the boosted iteration: policy, values, guide, and gate."""

    iteration: int
    dataset_pairs: list[tuple[int, int]]
    policy: TabularPolicy
    q_pi: Array
    v_pi: Array
    mu: TabularPolicy
    q_mu: Array
    v_mu: Array
    gate: Array  # (S,) bool


def offline_boosted_policy_iteration(
    mdp: TabularMdp,
    dataset: TabularDataset,
    beta: float = 1.0,
    iterations: int = 20,
    grow: bool = True,
    initial_policy: TabularPolicy | None = None,
    gate_mode: str = "adaptive",
    support_threshold: float = 1e-9,
) -> list[IterationRecord]:
    """Alternate exact evaluation, dataset-restricted optimum, V-gating, and
    the closed-form improvement; optionally grow the dataset with the pairs
    the current policy visits (its support), simulating buffer growth.

    gate_mode mirrors the neural ablations: "adaptive" compares values per
    state, "on" keeps the constraint everywhere, "off" reduces the whole
    trace to plain policy iteration.
    """
    if iterations < 1:
        raise DimensionError("iterations must be >= 1")
    if gate_mode not in ("adaptive", "on", "off"):
        raise DimensionError(f"gate_mode must be adaptive/on/off, got {gate_mode!r}")
    dataset = dataset.copy()
    policy = initial_policy or TabularPolicy.uniform(mdp.n_states, mdp.n_actions)
    trace: list[IterationRecord] = []

    def gate_of(v_mu: Array, v_pi: Array) -> Array:
        if gate_mode == "off":
            return np.zeros(mdp.n_states, dtype=bool)
        if gate_mode == "on":
            return np.ones(mdp.n_states, dtype=bool)
        return v_mu >= v_pi  # ties activate the constraint

    for k in range(iterations):
        if grow:
            for s in range(mdp.n_states):
                for a in np.flatnonzero(policy.probs[s] > support_threshold):
                    dataset.add(s, int(a))
        mu = offline_optimal_policy(mdp, dataset)
        q_pi, v_pi = exact_policy_evaluation(mdp, policy)
        q_mu, v_mu = exact_policy_evaluation(mdp, mu)
        gate = gate_of(v_mu, v_pi)
        trace.append(
            IterationRecord(k, dataset.pairs(), policy, q_pi, v_pi, mu, q_mu, v_mu, gate)
        )
        policy = closed_form_improvement(mu, q_pi, beta, gate)
    q_pi, v_pi = exact_policy_evaluation(mdp, policy)
    mu = offline_optimal_policy(mdp, dataset)
    q_mu, v_mu = exact_policy_evaluation(mdp, mu)
    trace.append(
        IterationRecord(iterations, dataset.pairs(), policy, q_pi, v_pi, mu, q_mu,
                        v_mu, gate_of(v_mu, v_pi))
    )
    return trace


# ------------------------------------------------------------------ expectile

def expectile_of_set(values, tau: float, tol: float = 1e-10) -> float:
    """Unique m with tau * sum_{x>m}(x-m) = (1-tau) * sum_{x<m}(m-x), by bisection."""
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        raise DimensionError("expectile of an empty set")
    if not (0.0 < tau < 1.0):
        raise NumericError(f"expectile factor must lie in (0,1), got {tau}")
    lo, hi = float(x.min()), float(x.max())
    if lo == hi:
        return lo

    def imbalance(m: float) -> float:
        above = x[x > m] - m
        below = m - x[x < m]
        return tau * above.sum() - (1.0 - tau) * below.sum()

    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if imbalance(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ------------------------------------------------- motivating concurrent study

@dataclass
class ConcurrentProbe:
    """Value comparison at one checkpoint of the concurrent-offline study."""

    step: int
    covered: bool
    skipped_states: list[int] = field(default_factory=list)
    probe_states: list[int] = field(default_factory=list)
    v_mu: Array | None = None
    v_pi: Array | None = None

    @property
    def offline_dominates(self) -> bool:
        if not self.covered:
            return False
        return bool(np.all(self.v_mu >= self.v_pi - 1e-12))


def motivating_example_concurrent(
    mdp: TabularMdp,
    behavior: TabularPolicy,
    total_steps: int,
    checkpoint_every: int,
    seed: int,
) -> list[ConcurrentProbe]:
    """Run a fixed behavior policy, grow a dataset from its visits, and compare
    the exact value of the dataset-restricted optimum against the behavior
    policy's own value at every checkpoint. The offline side never acts."""
    rng = np.random.default_rng(seed)
    dataset = TabularDataset.empty(mdp.n_states, mdp.n_actions)
    _, v_pi = exact_policy_evaluation(mdp, behavior)
    reach = reachable_states(mdp)
    probes: list[ConcurrentProbe] = []
    s = int(rng.choice(mdp.n_states, p=mdp.initial_dist))
    for step in range(1, total_steps + 1):
        a = int(rng.choice(mdp.n_actions, p=behavior.probs[s]))
        dataset.add(s, a)
        s = int(rng.choice(mdp.n_states, p=mdp.transitions[s, a]))
        if step % checkpoint_every == 0 or step == total_steps:
            uncovered = [int(u) for u in reach if not dataset.support[u].any()]
            if uncovered:
                probes.append(ConcurrentProbe(step, covered=False, skipped_states=uncovered))
                continue
            mu = offline_optimal_policy(mdp, dataset)
            _, v_mu = exact_policy_evaluation(mdp, mu)
            probe_states = [int(u) for u in dataset.covered_states()]
            probes.append(
                ConcurrentProbe(
                    step, covered=True, probe_states=probe_states,
                    v_mu=v_mu[probe_states], v_pi=v_pi[probe_states],
                )
            )
    return probes


# ------------------------------------------------------------------- file I/O

def save_mdp_file(path, mdp: TabularMdp, dataset: TabularDataset | None = None) -> None:
    doc = {
        "format": "offboost-mdp",
        "version": 1,
        "n_states": mdp.n_states,
        "n_actions": mdp.n_actions,
        "gamma": mdp.gamma,
        "transitions": mdp.transitions.tolist(),
        "rewards": mdp.rewards.tolist(),
        "initial_dist": mdp.initial_dist.tolist(),
    }
    if dataset is not None:
        doc["dataset"] = [
            [int(s), int(a), int(dataset.counts[s, a])]
            for s, a in zip(*np.nonzero(dataset.counts))
        ]
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)


def load_mdp_file(path) -> tuple[TabularMdp, TabularDataset | None]:
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: not valid JSON ({e})") from e
    if doc.get("format") != "offboost-mdp":
        raise FormatError(f"{path}: missing or wrong format marker")
    if doc.get("version") != 1:
        raise FormatError(f"{path}: unsupported version {doc.get('version')}")
    try:
        mdp = TabularMdp(
            n_states=int(doc["n_states"]),
            n_actions=int(doc["n_actions"]),
            transitions=np.asarray(doc["transitions"], dtype=np.float64),
            rewards=np.asarray(doc["rewards"], dtype=np.float64),
            gamma=float(doc["gamma"]),
            initial_dist=np.asarray(doc["initial_dist"], dtype=np.float64),
        )
    except KeyError as e:
        raise FormatError(f"{path}: missing field {e}") from e
    dataset = None
    if "dataset" in doc:
        dataset = TabularDataset.from_pairs(mdp.n_states, mdp.n_actions, doc["dataset"])
    return mdp, dataset
