"""The stochastic gradient family and its on-demand recursive twin.

Two ways to run the same method live here.  ``run_algorithm1_explicit``
sweeps every prefix of an explicit tree through K projected stochastic
gradient iterations (optionally Nesterov-accelerated).  ``recursive_R``
computes a single iterate value on demand, pulling in only the recursive
evaluations the estimator actually touches, memoized in a write-once table.
Both paths share one keyed sampling scheme -- the conditional draw multiset
for (prefix, k) and the period subsample for iteration k are pure functions
of the master seed -- and one floating-point code path for the update, so
the on-demand values equal the full-sweep values bit for bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from . import keys
from .errors import (CapacityError, ContractViolationError, MemoIntegrityError,
                     ParameterError)
from .model import (ExplicitScenarioTree, Prefix, Readout, SimulatorHandle,
                    node_values, tree_as_simulator)
from .penalty import huber_deriv

_EVAL_TOL = 1e-12
_ALG1_NODE_CAP = 20_000


@dataclass(frozen=True)
class SolverConfig:
    """Parameters of the gradient engine.

    ``momentum`` selects the schedule: "unaccelerated" keeps beta_k = 0,
    "accelerated" uses beta_0 = 0 and beta_k = (k-1)/(k+2).  ``eta1`` is the
    number of conditional completions per gradient component, ``eta2`` the
    size of the period subsample (eta2 = T disables subsampling).
    ``practical_override`` acknowledges that K and the etas are far below
    the theory schedule; it changes nothing mechanically.
    """

    epsilon: float
    theta: float
    alpha: float
    K: int
    eta1: int
    eta2: int
    master_seed: int = 0
    momentum: str = "unaccelerated"
    practical_override: bool = False

    def __post_init__(self):
        if self.alpha <= 0:
            raise ParameterError("step size alpha must be positive")
        if self.theta <= 0:
            raise ParameterError("smoothing parameter theta must be positive")
        if self.epsilon <= 0:
            raise ParameterError("epsilon must be positive")
        if self.K < 0:
            raise ParameterError("iteration count K must be >= 0")
        if self.eta1 < 1:
            raise ParameterError("eta1 must be >= 1")
        if self.eta2 < 1:
            raise ParameterError("eta2 must be >= 1")
        if self.momentum not in ("unaccelerated", "accelerated"):
            raise ParameterError(f"unknown momentum schedule {self.momentum!r}")

    def beta(self, k: int) -> float:
        if self.momentum == "unaccelerated" or k <= 0:
            return 0.0
        return (k - 1) / (k + 2)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SolverConfig":
        return cls(**json.loads(text))


@dataclass(frozen=True)
class IndexSample:
    """The shared period subsample for one iteration."""

    k: int
    indices: tuple[int, ...]


def sample_index_set(config: SolverConfig, T: int, k: int) -> IndexSample:
    """eta2 distinct periods from {1..T}, a pure function of (master_seed, k).

    Uses Floyd's sampling, so the cost is O(eta2) independent of T.  The
    same set is shared across all prefixes and solution vectors within an
    iteration.
    """
    if k < 0:
        raise ParameterError("iteration index must be >= 0")
    eta2 = config.eta2
    if eta2 > T:
        raise ParameterError(f"eta2 = {eta2} exceeds horizon T = {T}")
    if eta2 == T:
        return IndexSample(k, tuple(range(1, T + 1)))
    gen = keys.generator(config.master_seed, "aleph", k)
    chosen: set[int] = set()
    for j in range(T - eta2 + 1, T + 1):
        t = int(gen.integers(1, j + 1))
        if t in chosen:
            chosen.add(j)
        else:
            chosen.add(t)
    return IndexSample(k, tuple(sorted(chosen)))


class PathDraw:
    """One conditional completion, cached together with its readout."""

    __slots__ = ("traj", "readout", "times")

    def __init__(self, traj: Prefix, readout: Readout):
        self.traj = traj
        self.readout = readout
        times: dict[int, list[int]] = {}
        for t in range(1, len(traj) + 1):
            for i, _ in readout.rcv(t):
                times.setdefault(i, []).append(t)
        self.times = {i: tuple(ts) for i, ts in times.items()}

    def a_value(self, t: int, i: int) -> float:
        for j, v in self.readout.rcv(t):
            if j == i:
                return v
        return 0.0


class MemoTable:
    """Write-once iterate table plus the conditional-draw cache.

    Entry (prefix, k) stores X^k(prefix) for k >= 1; levels k <= 0 are
    implicitly zero.  Entries are never reassigned, and the draw multiset
    for (prefix, k) is generated exactly once.  Counters instrument the
    recursion for the complexity and horizon-independence checks.  A table
    and its recursion belong to one logical task (one policy episode,
    shared across its T decision epochs); parallelism runs independent
    (memo, seed) episodes.
    """

    __slots__ = ("entries", "draws", "_aleph", "_paths", "prefix_of", "writes",
                 "hits", "misses", "sim_calls", "draw_misses")

    def __init__(self):
        self.entries: dict[tuple[bytes, int], float] = {}
        self.draws: dict[tuple[bytes, int], tuple[PathDraw, ...]] = {}
        self._aleph: dict[int, frozenset[int]] = {}
        self._paths: dict[bytes, PathDraw] = {}
        self.prefix_of: dict[bytes, Prefix] = {}
        self.writes = 0
        self.hits = 0
        self.misses = 0
        self.sim_calls = 0
        self.draw_misses = 0

    def has(self, prefix: Prefix, k: int) -> bool:
        return k <= 0 or (prefix.key, k) in self.entries

    def value(self, prefix: Prefix, k: int) -> float:
        if k <= 0:
            return 0.0
        return self.entries[(prefix.key, k)]

    def put(self, prefix: Prefix, k: int, value: float) -> None:
        key = (prefix.key, k)
        if k <= 0 or key in self.entries:
            raise MemoIntegrityError(f"memo entry {key!r} already assigned")
        if not -_EVAL_TOL <= value <= 1 + _EVAL_TOL:
            raise MemoIntegrityError(f"iterate {value} escaped [0, 1]")
        self.entries[key] = value
        self.prefix_of.setdefault(prefix.key, prefix)
        self.writes += 1

    def aleph(self, config: SolverConfig, T: int, k: int) -> frozenset[int]:
        cached = self._aleph.get(k)
        if cached is None:
            cached = frozenset(sample_index_set(config, T, k).indices)
            self._aleph[k] = cached
        return cached

    def counters(self) -> dict[str, int]:
        return {
            "writes": self.writes,
            "hits": self.hits,
            "misses": self.misses,
            "sim_calls": self.sim_calls,
            "draw_misses": self.draw_misses,
        }


def conditional_draws(sim: SimulatorHandle, memo: MemoTable, prefix: Prefix,
                      k: int, config: SolverConfig) -> tuple[PathDraw, ...]:
    """The multiset of eta1 completions for (prefix, k), drawn once and cached.

    Draw j uses the key (master_seed, "traj", k, prefix_key, j), encoded
    hierarchically (a digest of the first four parts plus the counter j), so
    the multiset is a pure function of the master seed and is shared with
    the full-sweep method.  Readouts are deduplicated per trajectory.
    """
    if k < 0:
        raise ParameterError("draw level must be >= 0")
    cache_key = (prefix.key, k)
    cached = memo.draws.get(cache_key)
    if cached is not None:
        memo.hits += 1
        return cached
    memo.misses += 1
    memo.draw_misses += 1
    base = keys.key_digest(config.master_seed, "traj", k, prefix.key)
    paths = memo._paths
    out = []
    for j in range(1, config.eta1 + 1):
        traj = sim.complete(prefix, (base, j))
        memo.sim_calls += 1
        pd = paths.get(traj.key)
        if pd is None:
            pd = paths[traj.key] = PathDraw(traj, sim.readout(traj))
        out.append(pd)
    drawn = tuple(out)
    memo.draws[cache_key] = drawn
    return drawn


def _checked_eval(raw: Callable[[Prefix], float]) -> Callable[[Prefix], float]:
    def evalx(p: Prefix) -> float:
        v = raw(p)
        if not -1.0 - _EVAL_TOL <= v <= 2.0 + _EVAL_TOL:
            raise ContractViolationError(
                f"eval value {v} outside the extrapolation range [-1, 2]")
        return v
    return evalx


def grad_component(z_s: float, a_s: Sequence[tuple[int, float]],
                   draws: Sequence[PathDraw], aleph: frozenset[int],
                   evalx: Callable[[Prefix], float], b: Sequence[float],
                   T: int, eta1: int, eta2: int, theta: float,
                   iota: float) -> float:
    """One coordinate of the biased stochastic gradient.

    Z(S) - (2/iota) sum_{i in a+(S)} a_i(S) * eta1^-1 sum_{draws S'}
    phi'_theta( (T/eta2) sum_{t in aleph ^ T_i(S')} a_i(S'^t) X(S'^t) - b_i ).

    The iteration order (resources ascending, draws in key order, periods
    ascending) is part of the bitwise-equivalence contract between the
    full-sweep and on-demand implementations.
    """
    if not a_s:
        return z_s
    scale = T / eta2
    total = 0.0
    for i, ai in a_s:
        acc = 0.0
        by_traj: dict[bytes, float] = {}  # repeated draws share one derivative
        for d in draws:
            phi = by_traj.get(d.traj.key)
            if phi is None:
                s = 0.0
                for t in d.times.get(i, ()):
                    if t in aleph:
                        s += d.a_value(t, i) * evalx(d.traj.head(t))
                phi = by_traj[d.traj.key] = huber_deriv(scale * s - b[i], theta)
            acc += phi
        total += ai * (acc / eta1)
    return z_s - 2.0 / iota * total


def stochastic_grad_component(evalx: Callable[[Prefix], float],
                              sim: SimulatorHandle, memo: MemoTable,
                              prefix: Prefix, k: int,
                              config: SolverConfig) -> float:
    """Evaluate the estimator's S-coordinate at iteration k.

    ``evalx`` supplies the (extrapolated) solution values at every prefix of
    the cached completions; values outside [-1, 2] are rejected.
    """
    inst = sim.instance
    draws = conditional_draws(sim, memo, prefix, k, config)
    aleph = memo.aleph(config, inst.T, k)
    z_s, a_s = node_values(sim, prefix)
    return grad_component(z_s, a_s, draws, aleph, _checked_eval(evalx),
                          inst.b, inst.T, config.eta1, config.eta2,
                          config.theta, inst.iota)


def _clip01(v: float) -> float:
    return 0.0 if v < 0.0 else (1.0 if v > 1.0 else v)


def _extrapolation(memo: MemoTable, beta: float, k: int):
    def raw(p: Prefix) -> float:
        return (1.0 + beta) * memo.value(p, k) - beta * memo.value(p, k - 1)
    return raw


def _compute_entry(sim: SimulatorHandle, memo: MemoTable, prefix: Prefix,
                   k: int, config: SolverConfig) -> None:
    """Fill memo[(prefix, k)] assuming every dependency is already present."""
    beta = config.beta(k - 1)
    draws = conditional_draws(sim, memo, prefix, k - 1, config)
    aleph = memo.aleph(config, sim.instance.T, k - 1)
    z_s, a_s = node_values(sim, prefix)
    evalx = _checked_eval(_extrapolation(memo, beta, k - 1))
    ghat = grad_component(z_s, a_s, draws, aleph, evalx, sim.instance.b,
                          sim.instance.T, config.eta1, config.eta2,
                          config.theta, sim.instance.iota)
    xk = memo.value(prefix, k - 1)
    xkm1 = memo.value(prefix, k - 2)
    memo.put(prefix, k, _clip01((1.0 + beta) * xk - beta * xkm1
                                + config.alpha * ghat))


def _needed_times(a_s: Sequence[tuple[int, float]], draw: PathDraw,
                  aleph: frozenset[int]) -> list[int]:
    ts: set[int] = set()
    for i, _ in a_s:
        for t in draw.times.get(i, ()):
            if t in aleph:
                ts.add(t)
    return sorted(ts)


def recursive_R(sim: SimulatorHandle, memo: MemoTable, prefix: Prefix, k: int,
                config: SolverConfig) -> float:
    """On-demand computation of X^k(prefix) with memoization.

    Runs the recursion over an explicit work stack: computing (S, k) first
    requires (S, k-1), then level-(k-1) values at every sampled period of
    every cached completion that touches a resource S requests.  Each table
    entry is computed exactly once; the recursion count equals the number of
    memo writes.
    """
    if k <= 0:
        return 0.0
    inst = sim.instance
    stack: list[list] = [[prefix, k, False]]
    while stack:
        frame = stack[-1]
        S, kk, expanded = frame
        if memo.has(S, kk):
            stack.pop()
            continue
        if not expanded:
            frame[2] = True
            draws = conditional_draws(sim, memo, S, kk - 1, config)
            aleph = memo.aleph(config, inst.T, kk - 1)
            _, a_s = node_values(sim, S)
            deps: list[tuple[Prefix, int]] = [(S, kk - 1)]
            if a_s:
                for d in draws:
                    for t in _needed_times(a_s, d, aleph):
                        deps.append((d.traj.head(t), kk - 1))
            for dep_prefix, dep_k in reversed(deps):
                if not memo.has(dep_prefix, dep_k):
                    stack.append([dep_prefix, dep_k, False])
        else:
            _compute_entry(sim, memo, S, kk, config)
            stack.pop()
    return memo.value(prefix, k)


def decide_pen(sim: SimulatorHandle, memo: MemoTable, prefix: Prefix,
               config: SolverConfig) -> float:
    """The penalty policy's fractional decision: the average of the K iterates."""
    if config.K < 1:
        raise ParameterError("decide_pen needs K >= 1")
    recursive_R(sim, memo, prefix, config.K, config)
    total = 0.0
    for j in range(1, config.K + 1):
        total += memo.value(prefix, j)
    return _clip01(total / config.K)


def run_algorithm1_explicit(tree: ExplicitScenarioTree, config: SolverConfig,
                            memo: MemoTable | None = None):
    """Full-sweep reference run over every prefix of an explicit tree.

    Returns the list of iterate maps [X^1, ..., X^K] (prefix key to value).
    Shares the keyed sampling streams with ``recursive_R``; under the same
    master seed the two produce identical values.
    """
    if len(tree) > _ALG1_NODE_CAP:
        raise CapacityError(
            f"tree has {len(tree)} nodes; full sweep capped at {_ALG1_NODE_CAP}")
    sim = tree_as_simulator(tree)
    memo = memo if memo is not None else MemoTable()
    # zero-mass prefixes have no conditional law and never affect the
    # objective or the policy; both implementations refuse them
    prefixes = [p for p in tree.prefixes() if tree.mu(p) > 0.0]
    iterates = []
    for k in range(1, config.K + 1):
        for S in prefixes:
            _compute_entry(sim, memo, S, k, config)
        iterates.append({S.key: memo.value(S, k) for S in prefixes})
    return iterates


def averaged_solution(tree: ExplicitScenarioTree,
                      config: SolverConfig) -> dict[bytes, float]:
    """K^-1 sum of the full-sweep iterates, the solution decide_pen plays.

    Summation runs over j first per prefix, matching decide_pen's
    accumulation order exactly.
    """
    iterates = run_algorithm1_explicit(tree, config)
    out: dict[bytes, float] = {}
    for S in tree.prefixes():
        if tree.mu(S) <= 0.0:
            continue
        total = 0.0
        for it in iterates:
            total += it[S.key]
        out[S.key] = _clip01(total / config.K)
    return out


def leaf_grad_table(tree: ExplicitScenarioTree, prefix: Prefix,
                    x: dict[bytes, float], config: SolverConfig):
    """Per-completion values of the gradient integrand at a fixed solution.

    Requires eta2 = T (no period subsampling).  Returns (leaf keys,
    conditional probabilities, values) where values[j] is exactly what
    ``grad_component`` yields with eta1 = 1 when the single cached draw is
    leaf j: the arithmetic mirrors grad_component term for term, so engine
    draws can be cross-checked bitwise.  Used to scale up unbiasedness
    statistics without paying the keyed-draw overhead per sample.
    """
    inst = tree.instance
    if config.eta2 != inst.T:
        raise ParameterError("leaf_grad_table requires eta2 = T")
    node = tree.node(prefix)
    leaf_keys, cond = tree.leaves_under(prefix.key)
    scale = inst.T / config.eta2
    values = []
    for lk in leaf_keys:
        leaf = tree.node(lk).prefix
        pd = PathDraw(leaf, tree.readout(leaf))
        total = 0.0
        for i, ai in node.a:
            s = 0.0
            for t in pd.times.get(i, ()):
                s += pd.a_value(t, i) * x[leaf.head(t).key]
            acc = huber_deriv(scale * s - inst.b[i], config.theta)
            total += ai * (acc / 1)  # mirrors grad_component's acc / eta1
        values.append(node.z - 2.0 / inst.iota * total)
    return leaf_keys, cond, np.asarray(values)


# ---------------------------------------------------------------------------
# Theory schedule (exact closed forms)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParamBundle:
    alpha: float
    K: int
    eta1: int
    eta2: int
    alpha_exact: Fraction = field(repr=False, default=Fraction(0))


def _frac(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x)


def _ceil_frac(x: Fraction) -> int:
    return int(math.ceil(x))


def _int_root(n: int, root: int) -> int | None:
    """Exact integer r with r**root == n, or None."""
    if n <= 0:
        return None
    guess = round(n ** (1.0 / root))
    for r in (guess - 1, guess, guess + 1):
        if r > 0 and r ** root == n:
            return r
    return None


def _ceil_root(value: Fraction, root: int) -> int:
    """ceil(value ** (1/root)) with exact detection of perfect powers."""
    if value <= 0:
        raise ParameterError("root argument must be positive")
    rn = _int_root(value.numerator, root)
    rd = _int_root(value.denominator, root)
    if rn is not None and rd is not None:
        return _ceil_frac(Fraction(rn, rd))
    approx = (value.numerator / value.denominator) ** (1.0 / root)
    snapped = round(approx)
    if abs(approx - snapped) < 1e-9:
        return int(snapped)
    return int(math.ceil(approx))


def theta_default(epsilon: float, T: int, iota: float, V: int) -> float:
    """Default smoothing level epsilon * iota * T / (4 V)."""
    if V < 1:
        raise ParameterError("V must be >= 1")
    return float(_frac(epsilon) * _frac(iota) * T / (4 * V))


def theory_params(mode: str, epsilon: float, L: int, iota: float, theta: float,
                  T: int, U: int | None = None, W: int | None = None) -> ParamBundle:
    """Parameter schedule meeting the convergence guarantees, in exact arithmetic.

    Unaccelerated: alpha = iota^2 eps / (24 L^2), K = ceil(288 L^2/(eps^2
    iota^2)), eta1 = ceil(2304 L^2/(iota^2 eps^2)), eta2 = min(ceil(20736
    L^2 T^2/(iota^2 theta^2 eps^2)), T).  Accelerated: with q =
    ceil((ULW)^(1/4)/sqrt(iota theta)), alpha = 1/(4 q^2), K = 8 q
    ceil(eps^(-1/2)), eta1 = ceil(45696 L^2/(iota^2 eps^2)), eta2 =
    min(ceil(221184 L^2 T^2/(iota^2 theta^2 eps^2)), T).
    """
    eps = _frac(epsilon)
    io = _frac(iota)
    th = _frac(theta)
    if not 0 < eps <= 1:
        raise ParameterError("epsilon must lie in (0, 1]")
    if not 0 < th <= T:
        raise ParameterError("theta must lie in (0, T]")
    if L < 1:
        raise ParameterError("L must be >= 1")
    if mode == "unaccelerated":
        alpha = io * io * eps / (24 * L * L)
        K = _ceil_frac(288 * L * L / (eps * eps * io * io))
        eta1 = _ceil_frac(2304 * L * L / (io * io * eps * eps))
        eta2 = min(_ceil_frac(20736 * L * L * T * T / (io * io * th * th * eps * eps)), T)
        return ParamBundle(float(alpha), K, eta1, eta2, alpha)
    if mode == "accelerated":
        if U is None or W is None:
            raise ParameterError("accelerated schedule needs U and W")
        q = _ceil_root(_frac(U * L * W) / (io * th) ** 2, 4)
        alpha = Fraction(1, 4) / (q * q)
        K = 8 * q * _ceil_root(1 / eps, 2)
        eta1 = _ceil_frac(45696 * L * L / (io * io * eps * eps))
        eta2 = min(_ceil_frac(221184 * L * L * T * T / (io * io * th * th * eps * eps)), T)
        return ParamBundle(float(alpha), K, eta1, eta2, alpha)
    raise ParameterError(f"unknown schedule {mode!r}")
