"""Exact small-instance solvers and policy evaluators.

The integer optimum comes from backward induction over (tree node,
remaining budget) states; the fractional optimum from an explicit solve of
the deterministic-equivalent linear program (one constraint per resource
and trajectory); the smoothed penalty optimum from deterministic projected
ascent on the exact conditional-expectation gradient.  Policies are scored
either exactly by a tree sweep or by Monte Carlo episodes with a hard
feasibility audit.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Mapping

import numpy as np
from scipy.optimize import linprog

from .errors import (CapacityError, ConvergenceError, FeasibilityAuditError,
                     InstanceError)
from .model import (EMPTY_PREFIX, ExplicitScenarioTree, Prefix,
                    SimulatorHandle, derive_structure_constants)
from .penalty import exact_grad_f_theta, eval_f_theta

_AUDIT_TOL = 1e-9
_DP_STATE_CAP = 1_000_000
_LP_DIM_CAP = 10_000


# ---------------------------------------------------------------------------
# Exact integer optimum by dynamic programming
# ---------------------------------------------------------------------------


def _common_grid(values, max_denominator=512) -> Fraction | None:
    """A rational grid g such that every value is an integer multiple of g."""
    grid: Fraction | None = None
    for v in values:
        f = Fraction(v).limit_denominator(max_denominator)
        if abs(float(f) - v) > 1e-9:
            return None
        if f == 0:
            continue
        grid = f if grid is None else Fraction(
            math.gcd(grid.numerator * f.denominator, f.numerator * grid.denominator),
            grid.denominator * f.denominator,
        )
    return grid


@dataclass(frozen=True)
class PackSolution:
    value: float
    policy: Mapping[tuple[bytes, tuple], int]
    exact: bool
    grid: float | None


def solve_pack_dp(tree: ExplicitScenarioTree) -> PackSolution:
    """Exact optimum of the integer program by backward induction.

    The state is (node, remaining budget vector).  When consumption and
    budget values share a rational grid the remainders are tracked in
    integer grid units, which merges equivalent states aggressively;
    otherwise they are tracked as exact float tuples, which is still exact
    on a tree because only finitely many decision histories reach any node.
    The memo is capped; exceeding the cap raises rather than approximating.
    """
    inst = tree.instance
    values = [v for p in tree.prefixes() for _, v in tree.node(p).a]
    values.extend(inst.b)
    grid = _common_grid(values)
    gridf = float(grid) if grid is not None else None

    if grid is not None:
        b_state = tuple(int(round(x / gridf)) for x in inst.b)

        def need_of(pairs):
            return {i: int(round(v / gridf)) for i, v in pairs}

        def feasible(rem, need):
            return all(rem[i] >= u for i, u in need.items())
    else:
        b_state = tuple(inst.b)

        def need_of(pairs):
            return dict(pairs)

        def feasible(rem, need):
            return all(rem[i] >= u - _AUDIT_TOL for i, u in need.items())

    memo: dict[tuple[bytes, tuple], float] = {}
    choice: dict[tuple[bytes, tuple], int] = {}

    def best(node_key: bytes, rem: tuple) -> float:
        state = (node_key, rem)
        cached = memo.get(state)
        if cached is not None:
            return cached
        node = tree.node(node_key)
        need = need_of(node.a)
        options = []
        for d in (0, 1) if feasible(rem, need) else (0,):
            rem_after = rem
            if d and need:
                rem_list = list(rem)
                for i, u in need.items():
                    rem_list[i] -= u
                rem_after = tuple(rem_list)
            future = 0.0
            if node.children:
                mu = node.mu
                for child in tree.children(node_key):
                    if child.mu == 0.0 or mu == 0.0:
                        continue
                    future += (child.mu / mu) * best(child.prefix.key, rem_after)
            options.append((d * node.z + future, d))
        val, dec = max(options, key=lambda o: (o[0], -o[1]))
        if len(memo) >= _DP_STATE_CAP:
            raise CapacityError(f"DP memo exceeds cap {_DP_STATE_CAP}")
        memo[state] = val
        choice[state] = dec
        return val

    total = 0.0
    for rk in tree.root_keys:
        root = tree.node(rk)
        if root.mu > 0:
            total += root.mu * best(rk, b_state)
    return PackSolution(value=total, policy=choice, exact=True, grid=gridf)


def enumerate_pack(tree: ExplicitScenarioTree, cap: int = 22) -> float:
    """Brute-force optimum over all 0/1 assignments; oracle for the DP."""
    prefixes = tree.prefixes()
    n = len(prefixes)
    if n > cap:
        raise CapacityError(f"{n} decision nodes exceed enumeration cap {cap}")
    inst = tree.instance
    leaf_rows = []
    for leaf in tree.leaves():
        if tree.mu(leaf) == 0.0:  # constraints run over the support only
            continue
        r = tree.readout(leaf)
        idx = [prefixes.index(leaf.head(t)) for t in range(1, inst.T + 1)]
        leaf_rows.append((idx, [r.rcv(t) for t in range(1, inst.T + 1)]))
    mu_z = [tree.mu(p) * tree.node(p).z for p in prefixes]
    best_val = 0.0
    for mask in range(1 << n):
        x = [(mask >> j) & 1 for j in range(n)]
        ok = True
        for idx, rcvs in leaf_rows:
            loads: dict[int, float] = {}
            for pos, pairs in zip(idx, rcvs):
                if x[pos]:
                    for i, v in pairs:
                        loads[i] = loads.get(i, 0.0) + v
            if any(load > inst.b[i] + _AUDIT_TOL for i, load in loads.items()):
                ok = False
                break
        if ok:
            val = sum(w * xi for w, xi in zip(mu_z, x))
            best_val = max(best_val, val)
    return best_val


# ---------------------------------------------------------------------------
# Fractional optima: explicit LP and smoothed-penalty ascent
# ---------------------------------------------------------------------------


def _lp_arrays(tree: ExplicitScenarioTree):
    prefixes = tree.prefixes()
    index = {p.key: j for j, p in enumerate(prefixes)}
    c = np.array([-tree.mu(p) * tree.node(p).z for p in prefixes])
    rows = []
    rhs = []
    inst = tree.instance
    for leaf in tree.leaves():
        if tree.mu(leaf) == 0.0:  # constraints run over the support only
            continue
        r = tree.readout(leaf)
        per_resource: dict[int, dict[int, float]] = {}
        for t in range(1, inst.T + 1):
            col = index[leaf.head(t).key]
            for i, v in r.rcv(t):
                per_resource.setdefault(i, {})[col] = \
                    per_resource.get(i, {}).get(col, 0.0) + v
        for i, cols in sorted(per_resource.items()):
            row = np.zeros(len(prefixes))
            for col, v in cols.items():
                row[col] = v
            rows.append(row)
            rhs.append(inst.b[i])
    return prefixes, index, c, rows, rhs


def solve_lp_explicit(tree: ExplicitScenarioTree, tol: float = 1e-9):
    """Optimal value and solution of the deterministic-equivalent LP."""
    prefixes, _, c, rows, rhs = _lp_arrays(tree)
    n = len(prefixes)
    if n > _LP_DIM_CAP or len(rows) > _LP_DIM_CAP:
        raise CapacityError("explicit LP exceeds the oracle dimension cap")
    a_ub = np.vstack(rows) if rows else None
    b_ub = np.array(rhs) if rows else None
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, bounds=[(0.0, 1.0)] * n,
                  method="highs", options={"presolve": True})
    if not res.success:
        raise ConvergenceError(f"LP solve failed: {res.message}")
    solution = {p.key: float(np.clip(res.x[j], 0.0, 1.0))
                for j, p in enumerate(prefixes)}
    return float(-res.fun), solution


def solve_pen_lp(tree: ExplicitScenarioTree):
    """Optimal value of the unsmoothed penalty program via an epigraph LP.

    One auxiliary variable per (trajectory, requested resource) carries the
    hinge (load - b_i)^+ with weight 2 mu(S) / iota in the objective.
    """
    prefixes, index, c, rows, rhs = _lp_arrays(tree)
    inst = tree.instance
    n = len(prefixes)
    leaf_mus = []
    for leaf in tree.leaves():
        if tree.mu(leaf) == 0.0:  # aligned with the rows from _lp_arrays
            continue
        r = tree.readout(leaf)
        touched = sorted({i for t in range(1, inst.T + 1) for i, _ in r.rcv(t)})
        for _ in touched:
            leaf_mus.append(tree.mu(leaf))
    # rows were emitted leaf-major, resource-minor, matching leaf_mus order
    n_aux = len(rows)
    if n + n_aux > _LP_DIM_CAP:
        raise CapacityError("penalty LP exceeds the oracle dimension cap")
    c_full = np.concatenate([c, 2.0 / inst.iota * np.array(leaf_mus)]) \
        if n_aux else c
    a_rows = []
    b_vals = []
    for j, (row, cap) in enumerate(zip(rows, rhs)):
        full = np.zeros(n + n_aux)
        full[:n] = row
        full[n + j] = -1.0
        a_rows.append(full)
        b_vals.append(cap)
    bounds = [(0.0, 1.0)] * n + [(0.0, None)] * n_aux
    res = linprog(c_full, A_ub=np.vstack(a_rows) if a_rows else None,
                  b_ub=np.array(b_vals) if a_rows else None,
                  bounds=bounds, method="highs")
    if not res.success:
        raise ConvergenceError(f"penalty LP solve failed: {res.message}")
    return float(-res.fun)


def solve_pen_explicit(tree: ExplicitScenarioTree, theta: float,
                       tol: float = 1e-8, max_iters: int = 200_000):
    """Optimum of the smoothed penalty program by projected gradient ascent.

    Deterministic full-gradient ascent on the exact conditional-expectation
    gradient, with the step implied by the objective's smoothness bound and
    Nesterov momentum restarted whenever it stops helping.  Stops when the
    gradient mapping's sup norm falls below ``tol``.
    """
    inst = tree.instance
    consts = derive_structure_constants(tree)
    lips = 2.0 / (inst.iota * theta) * math.sqrt(
        max(consts.U * consts.L * consts.W, 1))
    step = 1.0 / lips
    keys_order = [p.key for p in tree.prefixes()]
    x = {k: 0.0 for k in keys_order}
    prev = x
    since_restart = 0
    check_every = 20
    for it in range(max_iters):
        beta = (since_restart - 1) / (since_restart + 2) if since_restart >= 1 else 0.0
        probe = {k: x[k] + beta * (x[k] - prev[k]) for k in keys_order}
        g = exact_grad_f_theta(tree, probe, theta)
        nxt = {}
        progress = 0.0
        raw_move = 0.0
        for k in keys_order:
            moved = probe[k] + step * g[k]
            moved = 0.0 if moved < 0.0 else (1.0 if moved > 1.0 else moved)
            nxt[k] = moved
            progress += g[k] * (moved - x[k])
            raw_move = max(raw_move, abs(moved - x[k]) / step)
        prev, x = x, nxt
        since_restart = 0 if progress < 0 else since_restart + 1
        # stationarity is certified at the accepted point, not the probe;
        # the exact check is amortized over a window once movement is small
        if raw_move <= tol or it % check_every == check_every - 1:
            g_here = exact_grad_f_theta(tree, x, theta)
            sup = 0.0
            for k in keys_order:
                moved = x[k] + step * g_here[k]
                moved = 0.0 if moved < 0.0 else (1.0 if moved > 1.0 else moved)
                sup = max(sup, abs(moved - x[k]) / step)
            if sup <= tol:
                return eval_f_theta(tree, x, theta), x
    raise ConvergenceError(
        f"projected ascent did not reach tol {tol} in {max_iters} iterations")


def eval_policy_exact(tree: ExplicitScenarioTree,
                      decisions: Mapping[bytes, float]) -> float:
    """Expected reward sum_S mu(S) Z(S) X(S) of a deterministic table."""
    total = 0.0
    for p in tree.prefixes():
        node = tree.node(p)
        try:
            total += node.mu * node.z * decisions[p.key]
        except KeyError:
            raise InstanceError("policy table is missing a prefix") from None
    return total


# ---------------------------------------------------------------------------
# Monte Carlo evaluation with a hard feasibility audit
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EvalReport:
    """Monte Carlo score of a policy with its feasibility audit.

    ``per_resource_max`` is the largest budget excess seen for each resource
    across all episodes (zero means the budget always held); ``max_violation``
    is its maximum.
    """

    mean_reward: float
    std_error: float
    episodes: int
    violation_count: int
    max_violation: float
    wall_time: float
    per_resource_max: tuple[float, ...] = ()

    def to_json(self) -> str:
        return json.dumps({
            "mean_reward": self.mean_reward,
            "std_error": self.std_error,
            "episodes": self.episodes,
            "violation_count": self.violation_count,
            "max_violation": self.max_violation,
            "per_resource_max": list(self.per_resource_max),
            "wall_time": self.wall_time,
        }, sort_keys=True)

    CSV_FIELDS = ("mean_reward", "std_error", "episodes", "violation_count",
                  "max_violation")

    def csv_row(self) -> dict:
        # wall_time is excluded so identical seeds give identical bytes
        return {
            "mean_reward": repr(self.mean_reward),
            "std_error": repr(self.std_error),
            "episodes": self.episodes,
            "violation_count": self.violation_count,
            "max_violation": repr(self.max_violation),
        }


PolicyFactory = Callable[[int], Callable[[Prefix], float]]


def eval_policy_mc(sim: SimulatorHandle, policy_factory: PolicyFactory,
                   n_episodes: int, seed: int,
                   audit: bool = True) -> EvalReport:
    """Score a streaming policy over independent episodes.

    ``policy_factory(episode)`` must return a fresh per-episode decision
    callable.  Every episode is audited against the budgets; any violation
    beyond 1e-9 aborts the evaluation with the offending trace.
    """
    inst = sim.instance
    start = time.perf_counter()
    rewards = np.empty(n_episodes)
    per_resource = [0.0] * inst.m
    violations = 0
    for e in range(n_episodes):
        policy = policy_factory(e)
        traj = sim.complete(EMPTY_PREFIX, (seed, "episode", e))
        r = sim.readout(traj)
        consumption = [0.0] * inst.m
        reward = 0.0
        decisions = []
        for t in range(1, inst.T + 1):
            x = float(policy(traj.head(t)))
            decisions.append(x)
            reward += r.reward(t) * x
            if x != 0.0:
                for i, v in r.rcv(t):
                    consumption[i] += v * x
        for i in range(inst.m):
            excess = consumption[i] - inst.b[i]
            if excess > _AUDIT_TOL:
                if audit:
                    raise FeasibilityAuditError(
                        f"episode {e} overdraws resource {i} by {excess}",
                        trace={"episode": e, "resource": i,
                               "decisions": decisions,
                               "consumption": consumption})
                violations += 1
            if excess > per_resource[i]:
                per_resource[i] = excess
        rewards[e] = reward
    mean = float(rewards.mean())
    se = float(rewards.std(ddof=1) / math.sqrt(n_episodes)) if n_episodes > 1 else 0.0
    return EvalReport(mean_reward=mean, std_error=se, episodes=n_episodes,
                      violation_count=violations,
                      max_violation=max(per_resource, default=0.0),
                      wall_time=time.perf_counter() - start,
                      per_resource_max=tuple(per_resource))


def reports_to_csv(rows: list[dict]) -> str:
    """Stable-schema CSV for (instance, policy, replicate-group) rows."""
    fields = ["instance", "policy", "seed", "episodes", "mean_reward",
              "std_error", "violation_count", "max_violation"]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row.get(k, "") for k in fields})
    return buf.getvalue()
