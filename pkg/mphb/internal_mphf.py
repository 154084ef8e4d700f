"""
Perfect hashing of one small key set through a random acyclic bipartite graph

Each key x becomes the edge {f0(x), tau + f1(x)} of a graph on 2 * tau
vertices. When the graph is acyclic, one depth-first pass labels every
vertex with T1[v] = 1 iff its depth mod 4 is 1 or 2, and
phi(x) = f0(x) if T1[f0(x)] == T1[tau + f1(x)] else tau + f1(x) picks the
edge endpoint farthest from the component root, which is 1-1 on the set.

The minimal function is rank(T2, phi(x)) where T2 marks phi(S). Only the T1
bits at marked positions can be 1, so T1 is stored compressed as T1' and
read back through the same rank.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from mphb.bucket_hash import HeuristicPairs, SeedSearchStats, SeedValue, find_seed
from mphb.config import BuildConfig, Mode, Provider
from mphb.gf2_hash import as_key_bytes, validate_key
from mphb.provider import StandaloneProvider
from mphb.rank import RankedBitVector, build_rank, rank1

logger = logging.getLogger(__name__)

PPM = 1_000_000


def vertex_range(n: int, epsilon_ppm: int) -> int:
    """tau = ceil((1 + epsilon) * n), exact; 0 for an empty set"""
    if n == 0:
        return 0
    return -(-(PPM + epsilon_ppm) * n // PPM)


def vertex_ranges(sizes: np.ndarray, epsilon_ppm: int) -> np.ndarray:
    """vertex_range over an array of bucket sizes"""
    sizes = np.asarray(sizes, dtype=np.int64)
    return -(-(PPM + epsilon_ppm) * sizes // PPM)


@dataclass(frozen=True, eq=False)
class BipartiteGraph:
    """
    Edges {left[e], tau + right[e]}, one per key in key order

    Left vertices are 0 .. tau-1 and right vertices tau .. 2*tau-1; the
    right array holds values before the tau offset is added.
    """

    tau: int
    left: np.ndarray
    right: np.ndarray

    @property
    def edge_count(self) -> int:
        return len(self.left)

    def edges(self):
        for left, right in zip(self.left.tolist(), self.right.tolist()):
            yield left, self.tau + right


def build_graph(h1, h2, tau: int) -> BipartiteGraph:
    """One edge per (h1[e], h2[e]) pair; duplicate edges are kept"""
    left = np.asarray(h1, dtype=np.int64)
    right = np.asarray(h2, dtype=np.int64)
    if left.shape != right.shape:
        raise ValueError("h1 and h2 must have the same length")
    if left.size and (left.max() >= tau or right.max() >= tau or min(left.min(), right.min()) < 0):
        raise ValueError(f"hash values must lie in [0, {tau})")
    return BipartiteGraph(tau, left, right)


def _adjacency(g: BipartiteGraph) -> Tuple[list, list, list]:
    """CSR adjacency: starts, neighbour vertices, edge ids"""
    edges = np.arange(g.edge_count)
    source = np.concatenate((g.left, g.right + g.tau))
    target = np.concatenate((g.right + g.tau, g.left))
    order = np.argsort(source, kind="stable")
    starts = np.zeros(2 * g.tau + 1, dtype=np.int64)
    np.cumsum(np.bincount(source, minlength=2 * g.tau), out=starts[1:])
    return starts.tolist(), target[order].tolist(), np.concatenate((edges, edges))[order].tolist()


def _traverse(g: BipartiteGraph) -> Optional[np.ndarray]:
    """
    Depths from the component roots, or None when the graph has a cycle

    Roots are tried in increasing left-vertex order, so every component is
    rooted at its lowest-index left vertex. Vertices without edges get -1.
    """
    size = 2 * g.tau
    depth = [-1] * size
    if g.edge_count == 0:
        return np.full(size, -1, dtype=np.int64)
    starts, neighbours, edge_ids = _adjacency(g)
    for root in range(g.tau):
        if depth[root] >= 0 or starts[root] == starts[root + 1]:
            continue
        depth[root] = 0
        stack = [(root, -1)]
        while stack:
            vertex, via = stack.pop()
            below = depth[vertex] + 1
            for k in range(starts[vertex], starts[vertex + 1]):
                edge = edge_ids[k]
                if edge == via:
                    continue
                other = neighbours[k]
                if depth[other] >= 0:
                    return None
                depth[other] = below
                stack.append((other, edge))
    return np.asarray(depth, dtype=np.int64)


def is_acyclic(g: BipartiteGraph) -> bool:
    """True iff g has no cycle; a repeated edge is a cycle of length 2"""
    return _traverse(g) is not None


def labels_from_depths(depths: np.ndarray) -> np.ndarray:
    phase = depths % 4
    return ((depths >= 0) & ((phase == 1) | (phase == 2))).astype(np.uint8)


def label_t1(g: BipartiteGraph) -> np.ndarray:
    """
    T1 over all 2 * tau vertices for an acyclic graph

    Raises:
        ValueError: if g has a cycle
    """
    depths = _traverse(g)
    if depths is None:
        raise ValueError("graph has a cycle")
    return labels_from_depths(depths)


def phi(t1, pair: Tuple[int, int], tau: int) -> int:
    """
    The endpoint of the key's edge that lies farther from its root

    Args:
        t1: Anything indexable by vertex giving the T1 bit
        pair: (h1, h2) of the key
        tau: Vertices per side

    Returns:
        h1 if T1 agrees on both endpoints, otherwise tau + h2
    """
    left, right = pair
    if t1[left] ^ t1[tau + right]:
        return tau + right
    return left


class CompressedT1:
    """T1 read through T2 and T1': bit v is T1'[rank(T2, v)] where T2[v] is set, 0 elsewhere"""

    __slots__ = ("t2", "t1c")

    def __init__(self, t2: RankedBitVector, t1c: np.ndarray):
        self.t2 = t2
        self.t1c = t1c

    def __getitem__(self, v: int) -> int:
        if not self.t2[v]:
            return 0
        return int(self.t1c[rank1(self.t2, v)])


@dataclass(frozen=True, eq=False)
class BucketFunction:
    """
    Perfect hash function of one bucket

    MPHF mode keeps T2 with its rank samples and the n-bit T1'; PHF mode
    keeps the full 2 * tau bit T1 and nothing else.
    """

    seed: Optional[SeedValue]
    tau: int
    n: int
    mode: Mode
    t2: Optional[RankedBitVector] = None
    t1c: Optional[np.ndarray] = None
    t1: Optional[np.ndarray] = None

    @classmethod
    def empty(cls, mode: Mode) -> "BucketFunction":
        return cls(None, 0, 0, mode)

    @property
    def range(self) -> int:
        return self.n if self.mode is Mode.MPHF else 2 * self.tau

    def t1_view(self):
        if self.mode is Mode.PHF:
            return self.t1
        return CompressedT1(self.t2, self.t1c)

    def __eq__(self, other):
        if not isinstance(other, BucketFunction):
            return NotImplemented
        return (self.seed == other.seed and self.tau == other.tau and self.n == other.n
                and self.mode == other.mode and self.t2 == other.t2
                and _same_bits(self.t1c, other.t1c) and _same_bits(self.t1, other.t1))

    __hash__ = None


def _same_bits(a: Optional[np.ndarray], b: Optional[np.ndarray]) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return np.array_equal(a, b)


def evaluate(f: BucketFunction, h1: int, h2: int) -> int:
    """
    Value of the bucket function for a key with hash pair (h1, h2)

    Keys outside the construction set still get a value in range.
    """
    if f.n == 0:
        return 0
    vertex = phi(f.t1_view(), (h1, h2), f.tau)
    if f.mode is Mode.PHF:
        return vertex
    return min(rank1(f.t2, vertex), f.n - 1)


def assemble(seed: SeedValue, tau: int, t1: np.ndarray, h1: np.ndarray, h2: np.ndarray,
             mode: Mode, kappa: int) -> BucketFunction:
    """Derive T2 and T1' from an accepted labelling"""
    n = len(h1)
    vertices = np.where(t1[h1] ^ t1[tau + h2], tau + h2, h1)
    if mode is Mode.PHF:
        return BucketFunction(seed, tau, n, mode, t1=t1)
    marks = np.zeros(2 * tau, dtype=np.uint8)
    marks[vertices] = 1
    t2 = build_rank(marks, kappa)
    return BucketFunction(seed, tau, n, mode, t2=t2, t1c=t1[marks == 1])


def build_bucket_function(
    bucket,
    family,
    config: BuildConfig,
    rng: np.random.Generator,
    stats: Optional[SeedSearchStats] = None,
    bucket_index: Optional[int] = None,
) -> BucketFunction:
    """
    Search a seed whose graph is acyclic and build the bucket's function

    Args:
        bucket: Items of the bucket in the pair family's format
        family: BucketHashTables or HeuristicPairs
        config: Supplies epsilon, kappa, mode and the attempt budget
        rng: Seed stream of this bucket
        stats: Optional attempt counters
        bucket_index: Bucket number for messages

    Returns:
        BucketFunction; the empty descriptor when the bucket has no keys
    """
    n = len(bucket)
    if n == 0:
        return BucketFunction.empty(config.mode)
    tau = vertex_range(n, config.epsilon_ppm)
    accepted = {}

    def acceptor(h1: np.ndarray, h2: np.ndarray) -> bool:
        depths = _traverse(BipartiteGraph(tau, h1, h2))
        if depths is None:
            return False
        accepted.update(h1=h1, h2=h2, depths=depths)
        return True

    seed = find_seed(family, bucket, tau, acceptor, rng, config.max_seed_attempts, stats, bucket_index)
    t1 = labels_from_depths(accepted["depths"])
    return assemble(seed, tau, t1, accepted["h1"], accepted["h2"], config.mode, config.kappa)


def _standalone_keys(keys, max_key_bytes: int) -> np.ndarray:
    checked = []
    for position, key in enumerate(keys, start=1):
        checked.append(validate_key(as_key_bytes(key), max_key_bytes, position))
    items = np.empty(len(checked), dtype=object)
    items[:] = checked
    return items


def build_standalone(keys: Sequence, config: Optional[BuildConfig] = None,
                     stats: Optional[SeedSearchStats] = None):
    """
    Build a whole in-memory key set as a single bucket

    f0 and f1 are two seeded MurmurHash3 evaluations of the raw key bytes,
    so no lookup tables are needed. The result has bucket_bits = 0 and is
    evaluated and serialised like any other PerfectHashFunction.

    Args:
        keys: Distinct byte strings
        config: Build configuration; the provider setting is ignored
        stats: Optional attempt counters

    Returns:
        PerfectHashFunction
    """
    from mphb.external_build import OffsetArray, PerfectHashFunction

    config = config or BuildConfig(provider=Provider.HEURISTIC)
    items = _standalone_keys(keys, config.max_key_bytes)
    rng = np.random.default_rng([config.seed, 0])
    logger.info("building standalone %s over %d keys", config.mode.value, len(items))
    bucket = build_bucket_function(items, HeuristicPairs(), config, rng, stats, bucket_index=0)
    return PerfectHashFunction(
        provider=StandaloneProvider(config.max_key_bytes),
        bucket_bits=0,
        mode=config.mode,
        epsilon_ppm=config.epsilon_ppm,
        kappa=config.kappa,
        offsets=OffsetArray.from_sizes([len(items)]),
        buckets=[bucket],
    )
