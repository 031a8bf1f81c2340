"""Core data model: prefixes, instances, scenario trees, and simulators.

The decision problem is indexed by partial histories (prefixes) of an
exogenous information process.  A ``Prefix`` owns a canonical byte
serialization used for identity, hashing, and draw-key derivation.  Small
finite-support processes are represented explicitly as an
``ExplicitScenarioTree``; arbitrary processes are reached only through a
``SimulatorHandle``, which bundles conditional trajectory completion with a
readout of rewards and resource consumption along a path.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import keys
from .errors import CapacityError, InstanceError, SupportError

Observation = tuple[float, ...]

_MU_TOL = 1e-9
_RANGE_TOL = 1e-12


def _canonical_observation(values: Sequence[float]) -> Observation:
    out = []
    for v in values:
        f = float(v)
        if math.isnan(f) or math.isinf(f):
            raise InstanceError("observation entries must be finite")
        out.append(0.0 if f == 0.0 else f)  # collapse -0.0 into +0.0
    return tuple(out)


class Prefix:
    """A partial history of the information process.

    Identity is the canonical little-endian serialization of the observation
    matrix (with its dimensions), so two prefixes are equal iff they encode
    the same reals in the same shape.  ``key`` is the serialization and is
    safe to use as a dict key or a draw-key part.
    """

    __slots__ = ("obs", "key", "_hash", "_heads")

    def __init__(self, obs: Iterable[Sequence[float]]):
        rows = tuple(_canonical_observation(o) for o in obs)
        dim = len(rows[0]) if rows else 0
        for r in rows:
            if len(r) != dim:
                raise InstanceError("ragged observation matrix")
        flat = [v for r in rows for v in r]
        self.obs = rows
        self.key = struct.pack("<II", dim, len(rows)) + struct.pack(
            f"<{len(flat)}d", *flat
        )
        self._hash = hash(self.key)
        self._heads: dict[int, "Prefix"] | None = None

    def __len__(self) -> int:
        return len(self.obs)

    def __eq__(self, other) -> bool:
        return isinstance(other, Prefix) and self.key == other.key

    def __hash__(self) -> int:
        return self._hash

    def __repr__(self) -> str:
        return f"Prefix(len={len(self.obs)}, key={self.key.hex()[:16]})"

    @property
    def last(self) -> Observation:
        if not self.obs:
            raise InstanceError("empty prefix has no last observation")
        return self.obs[-1]

    def head(self, t: int) -> "Prefix":
        """Length-t truncation (1-based count of periods); cached."""
        if t == len(self.obs):
            return self
        if not 0 <= t < len(self.obs):
            raise InstanceError(f"truncation length {t} out of range")
        cache = self._heads
        if cache is None:
            cache = self._heads = {}
        p = cache.get(t)
        if p is None:
            p = cache[t] = Prefix(self.obs[:t])
        return p

    def extend(self, observation: Sequence[float]) -> "Prefix":
        return Prefix(self.obs + (tuple(observation),))

    def startswith(self, other: "Prefix") -> bool:
        return self.obs[: len(other.obs)] == other.obs


# A trajectory is a prefix of full horizon length; the distinction is a
# contract on length, enforced where trajectories are produced or consumed.
Trajectory = Prefix

EMPTY_PREFIX = Prefix(())


@dataclass(frozen=True)
class InstanceSpec:
    """Static description of a packing instance.

    ``b`` holds the m resource budgets, ``L`` bounds the number of resources
    any one arrival touches, and ``iota`` is the lower bound on nonzero
    consumption values.  ``U``, ``V``, ``W`` are the structure constants used
    by the accelerated schedule and the smoothing default; on generative
    instances they are user-supplied, with ``V`` defaulting to the
    min(m, ceil(L/nu)) bound.
    """

    T: int
    m: int
    b: tuple[float, ...]
    L: int
    iota: float
    U: int | None = None
    V: int | None = None
    W: int | None = None
    nu: float | None = None
    lam: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "b", tuple(float(x) for x in self.b))
        if self.T < 1:
            raise InstanceError("horizon T must be >= 1")
        if self.m < 0 or len(self.b) != self.m:
            raise InstanceError("budget vector length must equal m")
        if any(x < 0 for x in self.b):
            raise InstanceError("budgets must be nonnegative")
        if not 0 < self.iota <= 1:
            raise InstanceError("iota must lie in (0, 1]")
        if self.L < 0:
            raise InstanceError("column sparsity bound L must be >= 0")
        if self.nu is None:
            nu = min(self.b) / self.T if self.b else 0.0
            object.__setattr__(self, "nu", nu)
        if self.lam is None:
            min_b = min(self.b) if self.b else 0.0
            lam = min(self.m, self.L * self.T / min_b) if min_b > 0 else float(self.m)
            object.__setattr__(self, "lam", lam)

    def v_bound(self) -> int:
        """min(m, ceil(L/nu)) when nu > 0, else m."""
        if self.nu and self.nu > 0:
            return min(self.m, math.ceil(self.L / self.nu))
        return self.m

    def v_or_default(self) -> int:
        return self.V if self.V is not None else max(1, self.v_bound())


class Readout:
    """Rewards and resource consumption along a prefix or trajectory.

    ``z[t-1]`` is the reward of period t; ``a[t-1]`` is the sparse r.c.v. as a
    tuple of (resource, value) pairs sorted by resource id.
    """

    __slots__ = ("z", "a")

    def __init__(self, z: Sequence[float], a: Sequence[tuple[tuple[int, float], ...]]):
        self.z = tuple(z)
        self.a = tuple(a)

    def reward(self, t: int) -> float:
        return self.z[t - 1]

    def rcv(self, t: int) -> tuple[tuple[int, float], ...]:
        return self.a[t - 1]


def _sorted_rcv(a: Mapping[int, float] | Iterable[tuple[int, float]]):
    items = a.items() if isinstance(a, Mapping) else a
    pairs = tuple(sorted((int(i), float(v)) for i, v in items if float(v) != 0.0))
    return pairs


@dataclass(frozen=True)
class SimulatorHandle:
    """The conditional-completion simulator plus its readout.

    ``complete(prefix, key)`` returns a full trajectory drawn from the law of
    the process conditional on the prefix; the empty prefix yields an
    unconditional draw.  Identical keys give identical trajectories.
    ``readout(prefix)`` returns rewards and r.c.v.s along any in-support
    prefix.  Matching-style encodings attach ``partite_of`` (IS) or
    ``block_lookup`` (MMO block window and offline endpoints).
    """

    instance: InstanceSpec
    complete: Callable[[Prefix, tuple], Trajectory]
    readout: Callable[[Prefix], Readout]
    partite_of: Callable[[Prefix], str] | None = None
    block_lookup: Callable[[Prefix], tuple] | None = None
    tree: "ExplicitScenarioTree | None" = None


def node_values(sim: SimulatorHandle, prefix: Prefix):
    """(Z(S), sparse rcv at S) for the final period of the prefix."""
    r = sim.readout(prefix)
    t = len(prefix)
    return r.reward(t), r.rcv(t)


def simulate_completion(sim: SimulatorHandle, prefix: Prefix, key: tuple) -> Trajectory:
    """Draw one conditional completion of ``prefix`` via the handle.

    Pure in (sim, prefix, key); the returned trajectory always begins with
    the prefix and has full horizon length.
    """
    T = sim.instance.T
    if not 1 <= len(prefix) <= T:
        raise InstanceError(f"prefix length {len(prefix)} outside [1, {T}]")
    traj = sim.complete(prefix, tuple(key))
    if len(traj) != T or not traj.startswith(prefix):
        raise InstanceError("simulator returned an inconsistent completion")
    return traj


class TreeNode:
    __slots__ = ("prefix", "mu", "z", "a", "parent", "children", "depth")

    def __init__(self, prefix, mu, z, a, parent, depth):
        self.prefix = prefix
        self.mu = mu
        self.z = z
        self.a = a
        self.parent = parent
        self.children: list[bytes] = []
        self.depth = depth


class ExplicitScenarioTree:
    """A fully enumerated finite-support process.

    Nodes cover every in-support prefix; each carries its absolute
    probability mu(S), reward Z(S), and sparse r.c.v.  Leaves sit exactly at
    depth T.  Construction validates probability consistency (children sum
    to their parent, level sums equal 1, total mass equals T) and the
    normalization assumptions on Z and a.
    """

    def __init__(self, instance: InstanceSpec, nodes: dict[bytes, TreeNode],
                 roots: list[bytes], order: list[bytes]):
        self.instance = instance
        self._nodes = nodes
        self.root_keys = tuple(roots)
        self.order = tuple(order)  # insertion (BFS-compatible) order over all prefixes
        self.leaf_keys = tuple(k for k in order if nodes[k].depth == instance.T)
        self._leaves_under: dict[bytes, tuple[tuple[bytes, ...], np.ndarray]] = {}
        self._validate()

    # -- accessors ---------------------------------------------------------

    def __contains__(self, prefix: Prefix) -> bool:
        return prefix.key in self._nodes

    def __len__(self) -> int:
        return len(self._nodes)

    def node(self, ref) -> TreeNode:
        key = ref.key if isinstance(ref, Prefix) else ref
        try:
            return self._nodes[key]
        except KeyError:
            raise SupportError("prefix not in the support of the tree") from None

    def prefixes(self):
        return [self._nodes[k].prefix for k in self.order]

    def leaves(self):
        return [self._nodes[k].prefix for k in self.leaf_keys]

    def mu(self, ref) -> float:
        return self.node(ref).mu

    def children(self, ref) -> list[TreeNode]:
        n = self.node(ref)
        return [self._nodes[c] for c in n.children]

    def readout(self, prefix: Prefix) -> Readout:
        node = self.node(prefix)
        zs, avs = [], []
        chain = [self.node(prefix.head(t)) for t in range(1, node.depth)] + [node]
        for nd in chain:
            zs.append(nd.z)
            avs.append(nd.a)
        return Readout(zs, avs)

    def leaves_under(self, ref):
        """(leaf keys, conditional probabilities) of the subtree below ref."""
        key = ref.key if isinstance(ref, Prefix) else ref
        cached = self._leaves_under.get(key)
        if cached is not None:
            return cached
        node = self.node(key)
        leaf_keys: list[bytes] = []
        probs: list[float] = []
        stack = [key]
        while stack:
            k = stack.pop()
            nd = self._nodes[k]
            if nd.depth == self.instance.T:
                leaf_keys.append(k)
                probs.append(nd.mu)
            else:
                stack.extend(reversed(nd.children))
        arr = np.asarray(probs, dtype=float)
        if node.mu > 0:
            arr = arr / node.mu
        out = (tuple(leaf_keys), arr)
        self._leaves_under[key] = out
        return out

    # -- validation --------------------------------------------------------

    def _validate(self):
        inst = self.instance
        if not self._nodes:
            raise InstanceError("empty scenario tree")
        dims = {len(n.prefix.last) for n in self._nodes.values()}
        if len(dims) != 1:
            raise InstanceError("observation dimension must be constant")
        root_mass = sum(self._nodes[k].mu for k in self.root_keys)
        if abs(root_mass - 1.0) > _MU_TOL:
            raise InstanceError(f"root probabilities sum to {root_mass}, not 1")
        total = 0.0
        for k in self.order:
            n = self._nodes[k]
            total += n.mu
            if n.mu < -_MU_TOL:
                raise InstanceError("negative node probability")
            if not -_RANGE_TOL <= n.z <= 1 + _RANGE_TOL:
                raise InstanceError(f"reward {n.z} outside [0, 1]")
            if len(n.a) > inst.L:
                raise InstanceError("column sparsity bound L violated")
            for i, v in n.a:
                if not 0 <= i < inst.m:
                    raise InstanceError(f"resource id {i} out of range")
                if not inst.iota - 1e-9 <= v <= 1 + _RANGE_TOL:
                    raise InstanceError(
                        f"consumption {v} outside {{0}} U [{inst.iota}, 1]")
            if n.depth < inst.T:
                if not n.children:
                    raise InstanceError("internal node without children")
                child_mass = sum(self._nodes[c].mu for c in n.children)
                if abs(child_mass - n.mu) > _MU_TOL * max(1.0, n.mu):
                    raise InstanceError("child probabilities do not sum to parent")
            elif n.children:
                raise InstanceError("leaf node with children")
        if abs(total - inst.T) > _MU_TOL * inst.T:
            raise InstanceError(f"total prefix mass {total} != T = {inst.T}")


class TreeBuilder:
    """Incremental construction of an ExplicitScenarioTree.

    Nodes are added with probabilities conditional on their parent; absolute
    probabilities are accumulated down the tree at build time.
    """

    def __init__(self, T: int, m: int, b: Sequence[float], L: int, iota: float,
                 U: int | None = None, V: int | None = None, W: int | None = None):
        self.instance = InstanceSpec(T=T, m=m, b=tuple(b), L=L, iota=iota,
                                     U=U, V=V, W=W)
        self._nodes: dict[bytes, TreeNode] = {}
        self._roots: list[bytes] = []
        self._order: list[bytes] = []

    def add(self, parent: Prefix | None, observation: Sequence[float],
            prob: float, z: float, a: Mapping[int, float] | None = None) -> Prefix:
        """Add a node under ``parent`` with conditional probability ``prob``."""
        a_pairs = _sorted_rcv(a or {})
        if parent is None:
            prefix = Prefix((observation,))
            mu = float(prob)
            parent_key = None
            depth = 1
        else:
            pnode = self._nodes.get(parent.key)
            if pnode is None:
                raise InstanceError("parent prefix not in tree")
            prefix = parent.extend(observation)
            mu = pnode.mu * float(prob)
            parent_key = parent.key
            depth = pnode.depth + 1
        if prefix.key in self._nodes:
            raise InstanceError("duplicate prefix (sibling observations must differ)")
        node = TreeNode(prefix, mu, float(z), a_pairs, parent_key, depth)
        self._nodes[prefix.key] = node
        self._order.append(prefix.key)
        if parent_key is None:
            self._roots.append(prefix.key)
        else:
            self._nodes[parent_key].children.append(prefix.key)
        return prefix

    def build(self) -> ExplicitScenarioTree:
        return ExplicitScenarioTree(self.instance, self._nodes, self._roots,
                                    self._order)


def tree_as_simulator(tree: ExplicitScenarioTree) -> SimulatorHandle:
    """Wrap an explicit tree as a SimulatorHandle.

    Completion samples a leaf from the conditional leaf distribution under
    the prefix (one uniform against the precomputed cumulative weights) and
    returns the stored leaf prefix; readout returns the stored node values.
    Zero-probability branches carry zero conditional mass and are never
    sampled.
    """
    cumdist: dict[bytes | None, tuple] = {}

    def _cumulative(node_key: bytes | None):
        cached = cumdist.get(node_key)
        if cached is None:
            if node_key is None:
                leaf_keys = tree.leaf_keys
                probs = np.array([tree.node(k).mu for k in leaf_keys])
            else:
                leaf_keys, probs = tree.leaves_under(node_key)
            cum = np.cumsum(probs)
            total = cum[-1] if len(cum) else 0.0
            if total <= 0.0:
                raise SupportError("no positive-probability continuation")
            leaves = tuple(tree.node(k).prefix for k in leaf_keys)
            cached = cumdist[node_key] = (leaves, cum, float(total))
        return cached

    def complete(prefix: Prefix, key: tuple) -> Trajectory:
        if len(prefix) == tree.instance.T:
            tree.node(prefix)  # support check only; nothing left to draw
            return prefix
        node_key = None if len(prefix) == 0 else tree.node(prefix).prefix.key
        leaves, cum, total = _cumulative(node_key)
        u = keys.UniformStream(*key).next() * total
        j = int(np.searchsorted(cum, u, side="right"))
        if j >= len(leaves):
            j = len(leaves) - 1
        return leaves[j]

    return SimulatorHandle(
        instance=tree.instance,
        complete=complete,
        readout=tree.readout,
        tree=tree,
    )


@dataclass(frozen=True)
class StructureConstants:
    U: int
    V: int
    W: int
    L: int
    iota: float
    nu: float
    lam: float
    V_bound: int


def derive_structure_constants(tree: ExplicitScenarioTree) -> StructureConstants:
    """Exact structure constants by exhaustive scan of the tree.

    U is the largest per-resource request count on any trajectory (clamped
    to >= 2), V the largest number of budget-saturating resources (clamped
    to >= 1), and W the largest total resource overlap between one arrival
    and all arrivals on the same trajectory.  V_bound is min(m, ceil(L/nu)).
    """
    inst = tree.instance
    if not tree.leaf_keys:
        raise InstanceError("tree has no leaves")
    U = 0
    V = 0
    W = 0
    L_seen = 0
    iota_seen = 1.0
    for leaf_key in tree.leaf_keys:
        leaf = tree.node(leaf_key).prefix
        r = tree.readout(leaf)
        supports = [frozenset(i for i, _ in r.rcv(t)) for t in range(1, inst.T + 1)]
        totals: dict[int, float] = {}
        counts: dict[int, int] = {}
        for t in range(1, inst.T + 1):
            pairs = r.rcv(t)
            L_seen = max(L_seen, len(pairs))
            for i, v in pairs:
                totals[i] = totals.get(i, 0.0) + v
                counts[i] = counts.get(i, 0) + 1
                iota_seen = min(iota_seen, v)
        if counts:
            U = max(U, max(counts.values()))
        V = max(V, sum(1 for i, tot in totals.items() if tot >= inst.b[i] - 1e-12))
        for r_t in range(1, inst.T + 1):
            ref = supports[r_t - 1]
            if not ref:
                continue
            overlap = sum(len(ref & s) for s in supports)
            W = max(W, overlap)
    nu = min(inst.b) / inst.T if inst.b else 0.0
    min_b = min(inst.b) if inst.b else 0.0
    lam = min(inst.m, inst.L * inst.T / min_b) if min_b > 0 else float(inst.m)
    v_bound = min(inst.m, math.ceil(inst.L / nu)) if nu > 0 else inst.m
    return StructureConstants(
        U=max(U, 2), V=max(V, 1), W=W, L=L_seen, iota=iota_seen,
        nu=nu, lam=lam, V_bound=v_bound,
    )


def demo_tree() -> ExplicitScenarioTree:
    """Two-period single-resource instance with an uncertain second reward.

    Accepting the period-1 item (reward 0.5) exhausts the budget that the
    period-2 item (reward 1 or 0.2, equally likely) would need.
    """
    tb = TreeBuilder(T=2, m=1, b=(1.0,), L=1, iota=1.0)
    root = tb.add(None, (0.0,), 1.0, z=0.5, a={0: 1.0})
    tb.add(root, (1.0,), 0.5, z=1.0, a={0: 1.0})
    tb.add(root, (2.0,), 0.5, z=0.2, a={0: 1.0})
    return tb.build()


# ---------------------------------------------------------------------------
# Reproducible NRM-style instance generation
# ---------------------------------------------------------------------------

_NRM_URN_BONUS = 0.5


class _NrmTables:
    """Seed-derived event tables for the NRM generator.

    Event 0 is a no-show (zero reward and consumption).  Each other event
    consumes at most L resources with values in [iota, 1] and carries a fixed
    reward.  Event probabilities are modulated by a two-state regime (flipped
    by the last event code) and reinforced by the full history's event
    counts, which makes the process genuinely non-Markovian.
    """

    def __init__(self, seed: int, m: int, L: int, iota: float, n_events: int):
        if n_events < 2:
            raise InstanceError("need at least two event codes")
        gen = keys.generator(seed, "nrm-tables")
        self.n_events = n_events
        self.z = [0.0]
        self.a: list[tuple[tuple[int, float], ...]] = [()]
        for _ in range(1, n_events):
            size = int(gen.integers(1, min(L, m) + 1)) if m > 0 and L > 0 else 0
            ids = sorted(int(i) for i in gen.choice(m, size=size, replace=False)) \
                if size else []
            vals = iota + (1.0 - iota) * gen.random(len(ids))
            self.a.append(tuple((i, float(v)) for i, v in zip(ids, vals)))
            self.z.append(float(0.05 + 0.95 * gen.random()))
        self.base = 0.2 + gen.random((2, n_events))
        self.shock_event = n_events - 1

    def law(self, history_events: Sequence[int]) -> list[float]:
        regime = sum(1 for e in history_events if e == self.shock_event) % 2
        counts = [0] * self.n_events
        for e in history_events:
            counts[e] += 1
        w = [self.base[regime][e] * (1.0 + _NRM_URN_BONUS * counts[e])
             for e in range(self.n_events)]
        total = sum(w)
        return [x / total for x in w]

    def event_of(self, observation: Observation) -> int:
        e = int(observation[0])
        if len(observation) != 1 or float(e) != observation[0] or \
                not 0 <= e < self.n_events:
            raise SupportError("observation is not a valid event code")
        return e


def generate_nrm(seed: int, T: int, m: int, L: int, iota: float,
                 budget_ratio: float, mode: str = "explicit",
                 n_events: int = 3, node_cap: int = 100_000):
    """Reproducible correlated-demand instance.

    ``mode="explicit"`` enumerates the full scenario tree (capped at
    ``node_cap`` nodes); ``mode="generative"`` returns a SimulatorHandle for
    the same process without enumeration.  Budgets are ``budget_ratio * T``
    for every resource, so nu equals the ratio by construction.
    """
    if mode not in ("explicit", "generative"):
        raise InstanceError(f"unknown mode {mode!r}")
    tables = _NrmTables(seed, m, L, iota, n_events)
    b = tuple(budget_ratio * T for _ in range(m))

    if mode == "explicit":
        count = sum(n_events ** t for t in range(1, T + 1))
        if count > node_cap:
            raise CapacityError(
                f"explicit tree needs {count} nodes, cap is {node_cap}")
        tb = TreeBuilder(T=T, m=m, b=b, L=L, iota=iota)
        frontier: list[tuple[Prefix | None, tuple[int, ...]]] = [(None, ())]
        for _ in range(T):
            nxt = []
            for parent, events in frontier:
                probs = tables.law(events)
                for e in range(n_events):
                    child = tb.add(parent, (float(e),), probs[e],
                                   z=tables.z[e], a=dict(tables.a[e]))
                    nxt.append((child, events + (e,)))
            frontier = nxt
        return tb.build()

    instance = InstanceSpec(T=T, m=m, b=b, L=L, iota=iota)

    def _events(prefix: Prefix) -> list[int]:
        return [tables.event_of(o) for o in prefix.obs]

    def complete(prefix: Prefix, key: tuple) -> Trajectory:
        events = _events(prefix)
        stream = keys.UniformStream(*key)
        obs_rows = list(prefix.obs)
        while len(obs_rows) < T:
            probs = tables.law(events)
            u = stream.next()
            acc = 0.0
            e = n_events - 1
            for cand, p in enumerate(probs):
                acc += p
                if u < acc:
                    e = cand
                    break
            events.append(e)
            obs_rows.append((float(e),))
        return Prefix(obs_rows)

    def readout(prefix: Prefix) -> Readout:
        events = _events(prefix)
        return Readout([tables.z[e] for e in events],
                       [tables.a[e] for e in events])

    return SimulatorHandle(instance=instance, complete=complete, readout=readout)


# ---------------------------------------------------------------------------
# Instance files
# ---------------------------------------------------------------------------

_SCHEMA_VERSION = 1


def tree_to_payload(tree: ExplicitScenarioTree) -> dict:
    """JSON-serializable description of an explicit instance.

    Nodes carry their absolute probability, reward, sparse r.c.v., and the
    observation row, so a round trip reconstructs identical prefixes.
    """
    inst = tree.instance
    ids = {key: j for j, key in enumerate(tree.order)}
    nodes = []
    for key in tree.order:
        n = tree.node(key)
        nodes.append({
            "prefix_id": ids[key],
            "parent_id": ids[n.parent] if n.parent is not None else None,
            "prob": n.mu,
            "Z": n.z,
            "a": [[i, v] for i, v in n.a],
            "obs": list(n.prefix.last),
        })
    payload = {
        "schema_version": _SCHEMA_VERSION,
        "kind": "explicit",
        "T": inst.T, "m": inst.m, "b": list(inst.b),
        "L": inst.L, "iota": inst.iota,
        "tree": {"nodes": nodes},
    }
    structure = {k: getattr(inst, k) for k in ("U", "V", "W")
                 if getattr(inst, k) is not None}
    if structure:
        payload["structure"] = structure
    return payload


def payload_to_tree(payload: dict) -> ExplicitScenarioTree:
    structure = payload.get("structure", {})
    instance = InstanceSpec(
        T=int(payload["T"]), m=int(payload["m"]),
        b=tuple(payload["b"]), L=int(payload["L"]),
        iota=float(payload["iota"]),
        U=structure.get("U"), V=structure.get("V"), W=structure.get("W"),
    )
    nodes: dict[bytes, TreeNode] = {}
    roots: list[bytes] = []
    order: list[bytes] = []
    by_id: dict[int, TreeNode] = {}
    for rec in payload["tree"]["nodes"]:
        parent_id = rec["parent_id"]
        obs = rec.get("obs")
        if obs is None:
            obs = [float(rec["prefix_id"])]  # synthesize a distinct observation
        if parent_id is None:
            prefix = Prefix((obs,))
            depth = 1
            parent_key = None
        else:
            parent = by_id.get(parent_id)
            if parent is None:
                raise InstanceError("node listed before its parent")
            prefix = parent.prefix.extend(obs)
            depth = parent.depth + 1
            parent_key = parent.prefix.key
        if prefix.key in nodes:
            raise InstanceError("duplicate prefix in instance file")
        node = TreeNode(prefix, float(rec["prob"]), float(rec["Z"]),
                        _sorted_rcv(rec.get("a", [])), parent_key, depth)
        nodes[prefix.key] = node
        by_id[rec["prefix_id"]] = node
        order.append(prefix.key)
        if parent_key is None:
            roots.append(prefix.key)
        else:
            nodes[parent_key].children.append(prefix.key)
    return ExplicitScenarioTree(instance, nodes, roots, order)


def generative_payload(family: str, params: dict,
                       structure: dict | None = None) -> dict:
    payload = {
        "schema_version": _SCHEMA_VERSION,
        "kind": "generative",
        "generator": {"family": family, **params},
    }
    if structure:
        payload["structure"] = structure
    return payload


@dataclass(frozen=True)
class LoadedInstance:
    spec: InstanceSpec
    sim: SimulatorHandle
    tree: ExplicitScenarioTree | None
    payload: dict


def load_instance_payload(payload: dict) -> LoadedInstance:
    kind = payload.get("kind")
    if kind == "explicit":
        tree = payload_to_tree(payload)
        return LoadedInstance(tree.instance, tree_as_simulator(tree), tree, payload)
    if kind == "generative":
        gen = dict(payload.get("generator", {}))
        family = gen.pop("family", None)
        if family != "nrm":
            raise InstanceError(f"unknown generator family {family!r}")
        sim = generate_nrm(mode="generative", **gen)
        structure = payload.get("structure", {})
        if structure:
            inst = sim.instance
            spec = InstanceSpec(T=inst.T, m=inst.m, b=inst.b, L=inst.L,
                                iota=inst.iota, U=structure.get("U"),
                                V=structure.get("V"), W=structure.get("W"))
            sim = SimulatorHandle(instance=spec, complete=sim.complete,
                                  readout=sim.readout)
        return LoadedInstance(sim.instance, sim, None, payload)
    raise InstanceError(f"unknown instance kind {kind!r}")


def save_instance(path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_instance(path) -> LoadedInstance:
    with open(path, "r", encoding="utf-8") as fh:
        return load_instance_payload(json.load(fh))
