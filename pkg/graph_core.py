#!/usr/bin/env python3
"""
Graph Core

Dense simple graphs and graphs with missing link data, stored as packed bit rows.
Also hosts ingestion (edge lists, ternary CSV matrices, label files), seeded
stochastic block model generation, uniform node sampling and link deletion.
"""
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional, TextIO, Tuple, Union

import numpy as np

# Row/column chunk used when drawing large graphs; must stay a multiple of 8
GENERATION_CHUNK = 2048


class DataError(ValueError):
    """Raised when input data is malformed or inconsistent."""


def _pack(matrix: np.ndarray) -> np.ndarray:
    bits = np.packbits(np.asarray(matrix, dtype=bool), axis=1)
    bits.setflags(write=False)
    return bits


def _unpack(bits: np.ndarray, n: int) -> np.ndarray:
    return np.unpackbits(bits, axis=1, count=n)


def _read_bits(bits: np.ndarray, rows, columns) -> np.ndarray:
    """Read entries rows x columns straight from packed storage."""
    rows = np.asarray(rows, dtype=np.int64)
    columns = np.asarray(columns, dtype=np.int64)
    packed = bits[np.ix_(rows, columns >> 3)]
    shift = (7 - (columns & 7)).astype(np.uint8)
    return (packed >> shift) & 1


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def _check_symmetric(matrix: np.ndarray, what: str):
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise DataError(f"{what} must be a square matrix, got shape {matrix.shape}")
    if not np.array_equal(matrix, matrix.T):
        i, j = np.argwhere(matrix != matrix.T)[0]
        raise DataError(f"{what} is not symmetric: entry ({i}, {j}) differs from ({j}, {i})")


@dataclass(frozen=True, eq=False)
class Graph:
    """Dense simple undirected graph on nodes 0..n-1."""

    n: int
    bits: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"a graph needs at least one node, got n={self.n}")
        if self.bits.shape != (self.n, (self.n + 7) // 8):
            raise ValueError(f"packed adjacency has shape {self.bits.shape}, expected ({self.n}, {(self.n + 7) // 8})")

    @classmethod
    def from_adjacency(cls, adjacency) -> "Graph":
        """Build a graph from a symmetric 0/1 matrix with zero diagonal."""
        adjacency = np.asarray(adjacency)
        _check_symmetric(adjacency, "adjacency")
        if not np.isin(adjacency, (0, 1)).all():
            raise DataError("adjacency entries must be 0 or 1")
        if adjacency.diagonal().any():
            raise DataError("adjacency must have a zero diagonal (no self-loops)")
        return cls(n=adjacency.shape[0], bits=_pack(adjacency))

    @classmethod
    def from_edges(cls, n: int, u, v) -> "Graph":
        """
        Build straight into packed storage from edge endpoint arrays.

        Duplicate and reversed pairs collapse into one edge.
        """
        u = np.asarray(u, dtype=np.int64)
        v = np.asarray(v, dtype=np.int64)
        if u.shape != v.shape:
            raise DataError(f"endpoint arrays differ in length: {u.size} and {v.size}")
        if u.size and (min(u.min(), v.min()) < 0 or max(u.max(), v.max()) >= n):
            raise DataError(f"node id out of range [0, {n})")
        if (u == v).any():
            raise DataError(f"self-loop on node {int(u[u == v][0])}")

        bits = np.zeros((n, (n + 7) // 8), dtype=np.uint8)
        rows = np.concatenate([u, v])
        columns = np.concatenate([v, u])
        np.bitwise_or.at(bits, (rows, columns >> 3), (0x80 >> (columns & 7)).astype(np.uint8))
        return cls(n=n, bits=_frozen(bits))

    @classmethod
    def empty(cls, n: int) -> "Graph":
        return cls(n=n, bits=_frozen(np.zeros((n, (n + 7) // 8), dtype=np.uint8)))

    @cached_property
    def adjacency(self) -> np.ndarray:
        return _frozen(_unpack(self.bits, self.n))

    @property
    def edge_count(self) -> int:
        return int(self.adjacency.sum()) // 2

    def sample_columns(self, rows, columns) -> np.ndarray:
        """Adjacency entries rows x columns; cost does not depend on n."""
        return _read_bits(self.bits, rows, columns)

    def subgraph(self, nodes) -> "Graph":
        """Induced subgraph; node i of the result is nodes[i]."""
        nodes = np.asarray(nodes, dtype=np.int64)
        return Graph.from_adjacency(self.sample_columns(nodes, nodes))


@dataclass(frozen=True, eq=False)
class MaskedGraph:
    """
    Graph with partially missing link data.

    d_bits packs the observed-link matrix D, b_bits the observation indicator B.
    A pair with B = 0 carries no information; the diagonal is always unobserved.
    """

    n: int
    d_bits: np.ndarray = field(repr=False)
    b_bits: np.ndarray = field(repr=False)

    @classmethod
    def from_raw(cls, raw) -> "MaskedGraph":
        """
        Build from a ternary matrix with -1 marking missing pairs.

        The diagonal is overridden to -1 whatever the input holds there.
        """
        raw = np.array(raw, dtype=np.int64)
        _check_symmetric(raw, "ternary matrix")
        if not np.isin(raw, (-1, 0, 1)).all():
            raise DataError("ternary matrix entries must be -1, 0 or 1")
        np.fill_diagonal(raw, -1)

        d = (raw + np.abs(raw)) // 2
        b = (raw - np.abs(raw)) // 2 + 1
        assert (d <= b).all()
        return cls(n=raw.shape[0], d_bits=_pack(d), b_bits=_pack(b))

    @cached_property
    def D(self) -> np.ndarray:
        return _frozen(_unpack(self.d_bits, self.n))

    @cached_property
    def B(self) -> np.ndarray:
        return _frozen(_unpack(self.b_bits, self.n))

    @property
    def raw(self) -> np.ndarray:
        return np.where(self.B == 0, -1, self.D).astype(np.int8)

    @property
    def missing_pairs(self) -> int:
        """Number of unordered off-diagonal pairs without link data."""
        return (self.n * (self.n - 1) - int(self.B.sum())) // 2

    def sample_columns(self, rows, columns) -> Tuple[np.ndarray, np.ndarray]:
        """(D, B) entries rows x columns read from packed storage."""
        return _read_bits(self.d_bits, rows, columns), _read_bits(self.b_bits, rows, columns)

    def subgraph(self, nodes) -> "MaskedGraph":
        nodes = np.asarray(nodes, dtype=np.int64)
        d, b = self.sample_columns(nodes, nodes)
        return MaskedGraph.from_raw(np.where(b == 0, -1, d))


AnyGraph = Union[Graph, MaskedGraph]


@dataclass(frozen=True, eq=False)
class Partition:
    """Assignment of nodes 0..n-1 to blocks 0..k-1."""

    k: int
    assignment: np.ndarray

    def __post_init__(self):
        assignment = np.asarray(self.assignment, dtype=np.int64)
        if assignment.ndim != 1 or assignment.size == 0:
            raise ValueError("assignment must be a non-empty 1-d sequence")
        if not 1 <= self.k <= assignment.size:
            raise ValueError(f"block count k={self.k} must lie in [1, {assignment.size}]")
        if assignment.min() < 0 or assignment.max() >= self.k:
            raise ValueError(f"assignment values must lie in [0, {self.k - 1}]")
        object.__setattr__(self, "assignment", _frozen(assignment.copy()))

    @property
    def n(self) -> int:
        return self.assignment.size

    def indicator(self) -> np.ndarray:
        """The n x k matrix R with R[i, a] = 1 iff node i is in block a."""
        return np.eye(self.k)[self.assignment]

    def block_sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.k)

    def is_valid(self) -> bool:
        """True when no block is empty."""
        return bool((self.block_sizes() > 0).all())

    def same_as(self, other: "Partition") -> bool:
        return self.k == other.k and np.array_equal(self.assignment, other.assignment)

    def relabel(self, mapping) -> "Partition":
        """Rename block a to mapping[a]."""
        return Partition(self.k, np.asarray(mapping)[self.assignment])

    def compacted(self) -> "Partition":
        """Same grouping with empty blocks removed, surviving blocks kept in order."""
        present, assignment = np.unique(self.assignment, return_inverse=True)
        return Partition(len(present), assignment)

    @classmethod
    def random_valid(cls, n: int, k: int, rng: np.random.Generator, max_draws: int = 1000) -> "Partition":
        """
        Uniformly random assignment with no empty block (rejection sampling).

        When k is close to n rejection rarely succeeds; after max_draws failures one node
        of a random permutation is pinned to each block and the rest drawn at random.
        """
        for _ in range(max_draws):
            assignment = rng.integers(0, k, size=n)
            if np.bincount(assignment, minlength=k).min() > 0:
                return cls(k, assignment)
        assignment = rng.integers(0, k, size=n)
        assignment[rng.permutation(n)[:k]] = np.arange(k)
        return cls(k, assignment)


@dataclass(frozen=True, eq=False)
class SbmSpec:
    """Stochastic block model parameters."""

    block_sizes: Tuple[int, ...]
    P: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.block_sizes)
        if not sizes or min(sizes) < 1:
            raise ValueError("block_sizes must be a non-empty sequence of positive integers")
        P = np.array(self.P, dtype=float)
        if P.shape != (len(sizes), len(sizes)):
            raise ValueError(f"P must be {len(sizes)}x{len(sizes)}, got shape {P.shape}")
        if not np.array_equal(P, P.T):
            raise ValueError("P must be symmetric")
        if P.min() < 0.0 or P.max() > 1.0:
            raise ValueError("P entries must be probabilities in [0, 1]")
        if len(np.unique(P, axis=0)) < len(sizes):
            warnings.warn("P has identical rows; the block structure is redundant", stacklevel=3)
        object.__setattr__(self, "block_sizes", sizes)
        object.__setattr__(self, "P", _frozen(P))

    @property
    def k(self) -> int:
        return len(self.block_sizes)

    @property
    def N(self) -> int:
        return sum(self.block_sizes)

    @property
    def relative_sizes(self) -> np.ndarray:
        return np.asarray(self.block_sizes, dtype=float) / self.N

    def labels(self) -> np.ndarray:
        return np.repeat(np.arange(self.k), self.block_sizes)

    def to_dict(self) -> dict:
        return {"block_sizes": list(self.block_sizes), "P": self.P.tolist(), "seed": self.seed}

    @classmethod
    def from_dict(cls, data: dict) -> "SbmSpec":
        return cls(tuple(data["block_sizes"]), np.asarray(data["P"], dtype=float), data.get("seed"))


def uniform_p_matrix(k: int, seed: Optional[int] = None) -> np.ndarray:
    """Symmetric k x k matrix with i.i.d. Uniform(0, 1) entries on and above the diagonal."""
    upper = np.triu(np.random.default_rng(seed).random((k, k)))
    return upper + np.triu(upper, 1).T


def equal_blocks_spec(k: int, N: int, P, seed: Optional[int] = None) -> SbmSpec:
    """SbmSpec with k blocks of (almost) equal size summing to N."""
    sizes = [N // k + (1 if i < N % k else 0) for i in range(k)]
    return SbmSpec(tuple(sizes), np.asarray(P, dtype=float), seed)


def planted_p_matrix(k: int, within: float, cross: float) -> np.ndarray:
    return np.full((k, k), cross) + (within - cross) * np.eye(k)


def generate_sbm(spec: SbmSpec) -> Tuple[Graph, Partition]:
    """
    Draw a graph from the block model; every unordered pair links independently.

    The adjacency is produced in GENERATION_CHUNK-sized tiles straight into packed
    storage, so graphs well beyond the dense-matrix range can be drawn.
    """
    N = spec.N
    if N < 2:
        raise ValueError(f"a block model graph needs at least 2 nodes, got {N}")
    labels = spec.labels()
    rng = np.random.default_rng(spec.seed)
    bits = np.zeros((N, (N + 7) // 8), dtype=np.uint8)

    for a in range(0, N, GENERATION_CHUNK):
        a_end = min(a + GENERATION_CHUNK, N)
        for b in range(a, N, GENERATION_CHUNK):
            b_end = min(b + GENERATION_CHUNK, N)
            probs = spec.P[np.ix_(labels[a:a_end], labels[b:b_end])]
            tile = rng.random(probs.shape) < probs
            if a == b:
                tile = np.triu(tile, 1)
                tile = tile | tile.T
            bits[a:a_end, b // 8:(b_end + 7) // 8] = np.packbits(tile, axis=1)
            if a != b:
                bits[b:b_end, a // 8:a_end // 8] = np.packbits(tile.T, axis=1)

    return Graph(n=N, bits=_frozen(bits)), Partition(spec.k, labels)


def uniform_sample(graph: AnyGraph, n0: int, seed: Optional[int] = None) -> Tuple[np.ndarray, AnyGraph]:
    """
    Draw n0 distinct nodes uniformly without replacement.

    Returns:
        (sorted node ids, induced subgraph); node i of the subgraph is ids[i]
    """
    if not 1 <= n0 <= graph.n:
        raise ValueError(f"sample size must lie in [1, {graph.n}], got {n0}")
    nodes = np.sort(np.random.default_rng(seed).choice(graph.n, size=n0, replace=False))
    return nodes, graph.subgraph(nodes)


def drop_links(graph: Graph, fraction: float, seed: Optional[int] = None) -> MaskedGraph:
    """
    Mark each unordered pair missing independently with probability `fraction`.

    The mask is drawn in GENERATION_CHUNK tiles over the upper triangle and
    mirrored, straight into packed storage.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
    N = graph.n
    rng = np.random.default_rng(seed)
    observed = np.zeros_like(graph.bits)

    for a in range(0, N, GENERATION_CHUNK):
        a_end = min(a + GENERATION_CHUNK, N)
        for b in range(a, N, GENERATION_CHUNK):
            b_end = min(b + GENERATION_CHUNK, N)
            tile = rng.random((a_end - a, b_end - b)) >= fraction
            if a == b:
                tile = np.triu(tile, 1)
                tile = tile | tile.T
            observed[a:a_end, b // 8:(b_end + 7) // 8] = np.packbits(tile, axis=1)
            if a != b:
                observed[b:b_end, a // 8:a_end // 8] = np.packbits(tile.T, axis=1)

    return MaskedGraph(n=N, d_bits=_frozen(graph.bits & observed), b_bits=_frozen(observed))


def _data_lines(stream: TextIO) -> Iterable[Tuple[int, str]]:
    for lineno, line in enumerate(stream, start=1):
        content = line.split('#', 1)[0].strip()
        if content:
            yield lineno, content


def load_edge_list(stream: TextIO, n: int) -> Graph:
    """
    Read a whitespace-separated "u v" edge list over nodes 0..n-1.

    Duplicate and reversed pairs collapse into one edge; '#' starts a comment.
    """
    if n < 1:
        raise ValueError(f"node count must be positive, got {n}")
    sources, targets = [], []
    for lineno, content in _data_lines(stream):
        parts = content.split()
        if len(parts) != 2:
            raise DataError(f"line {lineno}: expected two node ids, got {content!r}")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise DataError(f"line {lineno}: node ids must be integers, got {content!r}") from None
        if not (0 <= u < n and 0 <= v < n):
            raise DataError(f"line {lineno}: node id out of range [0, {n})")
        if u == v:
            raise DataError(f"line {lineno}: self-loop on node {u}")
        sources.append(u)
        targets.append(v)
    return Graph.from_edges(n, sources, targets)


def write_edge_list(graph: Graph, stream: TextIO, header: Iterable[str] = ()):
    """Write edges as "u v" lines with u < v, sorted."""
    for line in header:
        stream.write(f"# {line}\n")
    for start in range(0, graph.n, GENERATION_CHUNK):
        rows = _unpack(graph.bits[start:start + GENERATION_CHUNK], graph.n)
        for r, v in zip(*np.nonzero(np.triu(rows, start + 1))):
            stream.write(f"{start + r} {v}\n")


def load_ternary_matrix(stream: TextIO) -> MaskedGraph:
    """Read a CSV matrix with entries -1 (missing), 0 and 1."""
    rows = []
    for lineno, content in _data_lines(stream):
        try:
            rows.append([int(x) for x in content.split(',')])
        except ValueError:
            raise DataError(f"line {lineno}: entries must be integers, got {content!r}") from None
    if not rows:
        raise DataError("ternary matrix is empty")
    if len({len(row) for row in rows}) != 1:
        raise DataError("ternary matrix rows have different lengths")
    return MaskedGraph.from_raw(np.array(rows, dtype=np.int64))


def write_ternary_matrix(graph: MaskedGraph, stream: TextIO, header: Iterable[str] = ()):
    for line in header:
        stream.write(f"# {line}\n")
    for row in graph.raw:
        stream.write(",".join(str(int(x)) for x in row) + "\n")


def write_labels(partition: Partition, stream: TextIO, header: Iterable[str] = ()):
    """Write a "node_id,block" label file."""
    for line in header:
        stream.write(f"# {line}\n")
    stream.write("node_id,block\n")
    for node, block in enumerate(partition.assignment):
        stream.write(f"{node},{block}\n")


def load_labels(stream: TextIO, k: Optional[int] = None) -> Partition:
    """Read a "node_id,block" label file; ids must cover 0..n-1 exactly once."""
    pairs = []
    for lineno, content in _data_lines(stream):
        if content.replace(" ", "") == "node_id,block":
            continue
        try:
            node, block = (int(x) for x in content.split(','))
        except ValueError:
            raise DataError(f"line {lineno}: expected 'node_id,block', got {content!r}") from None
        pairs.append((node, block))
    if not pairs:
        raise DataError("label file holds no labels")
    pairs.sort()
    nodes = np.array([p[0] for p in pairs])
    if not np.array_equal(nodes, np.arange(len(pairs))):
        raise DataError("label file must list every node id 0..n-1 exactly once")
    blocks = np.array([p[1] for p in pairs])
    if blocks.min() < 0:
        raise DataError("block labels must be non-negative")
    return Partition(k or int(blocks.max()) + 1, blocks)


def pair_count(m: int) -> int:
    return math.comb(m, 2)
