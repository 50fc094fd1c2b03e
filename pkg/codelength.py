#!/usr/bin/env python3
"""
Description-length arithmetic for block models of simple graphs.

All code lengths are in bits. Covers the Bernoulli entropy, the universal
integer code length l*, block statistics of a partition (with or without
missing link data), the two-part cost minimized by the solver and the
five-term code length report.
"""
import json
import math
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
from scipy.special import entr
from scipy.stats import entropy

from graph_core import AnyGraph, DataError, MaskedGraph, Partition

LN2 = np.log(2)


def bernoulli_entropy(p: float) -> float:
    """
    Entropy of a Bernoulli(p) variable in bits, with 0 log 0 = 0.

    Raises:
        ValueError: If p is outside [0, 1]
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability must lie in [0, 1], got {p}")
    return float((entr(p) + entr(1.0 - p)) / LN2)


def entropy_bits(p: np.ndarray) -> np.ndarray:
    """Element-wise Bernoulli entropy in bits of an array of probabilities."""
    p = np.asarray(p, dtype=float)
    return (entr(p) + entr(1.0 - p)) / LN2


def l_star(m: int) -> float:
    """
    Universal code length of a non-negative integer.

    Sums the strictly positive terms of log2 m + log2 log2 m + ...;
    l_star(0) = l_star(1) = 0.
    """
    if m < 0:
        raise ValueError(f"l_star is defined for non-negative integers, got {m}")
    total = 0.0
    term = math.log2(m) if m > 1 else 0.0
    while term > 0:
        total += term
        term = math.log2(term)
    return total


@dataclass(frozen=True)
class LinkData:
    """
    Float matrices the block arithmetic works on.

    D holds the observed links; B the observation indicator, or None when every
    off-diagonal pair is observed (a plain graph).
    """

    n: int
    D: np.ndarray
    B: Optional[np.ndarray] = None

    @classmethod
    def of(cls, graph: AnyGraph) -> "LinkData":
        if isinstance(graph, MaskedGraph):
            return cls(graph.n, graph.D.astype(float), graph.B.astype(float))
        return cls(graph.n, graph.adjacency.astype(float))

    @property
    def masked(self) -> bool:
        return self.B is not None


@dataclass(frozen=True, eq=False)
class BlockStats:
    """Sizes, link counts, observed pair counts and densities of a partition."""

    k: int
    n_alpha: np.ndarray
    e: np.ndarray
    pairs: np.ndarray
    P: np.ndarray

    @property
    def n(self) -> int:
        return int(self.n_alpha.sum())

    def link_count(self, alpha: int, beta: int) -> int:
        return int(round(self.e[alpha, beta]))


def block_stats(graph: AnyGraph, partition: Partition) -> BlockStats:
    """
    Block statistics of `partition` on `graph`.

    Without missing data the pair counts are C(n_a, 2) on the diagonal and n_a n_b
    elsewhere; with missing data they count observed pairs only and the densities
    are the observed ones.
    """
    if partition.n != graph.n:
        raise DataError(f"partition covers {partition.n} nodes but the graph has {graph.n}")
    return block_stats_from(LinkData.of(graph), partition)


def block_stats_from(data: LinkData, partition: Partition) -> BlockStats:
    R = partition.indicator()
    n_alpha = R.sum(axis=0)
    k = partition.k

    P1 = R.T @ (data.D @ R)
    if data.masked:
        observed = R.T @ (data.B @ R)
    else:
        # R^T (J - I) R without forming J
        observed = np.outer(n_alpha, n_alpha) - np.diag(n_alpha)

    half = 1.0 - 0.5 * np.eye(k)
    e = half * P1
    pairs = half * observed
    P = np.divide(e, pairs, out=np.zeros((k, k)), where=pairs > 0)
    return BlockStats(k=k, n_alpha=n_alpha.astype(np.int64), e=e, pairs=pairs, P=P)


@dataclass
class CodeLengthReport:
    """Two-part code length with the five-term breakdown kept for reporting."""

    k: int
    data_bits: float
    model_bits: float
    total_bits: float
    eq1_parts: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, float]:
        return {
            'k': self.k,
            'data_bits': self.data_bits,
            'model_bits': self.model_bits,
            'total_bits': self.total_bits,
            **self.eq1_parts,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _eq1_parts(stats: BlockStats, n: int) -> Dict[str, float]:
    # fsum and sorted sizes keep every term independent of block order
    sizes = stats.n_alpha.astype(float)
    H = entropy_bits(stats.P)
    diagonal = sizes * (sizes - 1) / 2 * np.diag(H)
    upper = np.triu_indices(stats.k, 1)
    cross = np.outer(sizes, sizes)[upper] * H[upper]
    link_bits = math.fsum(l_star(stats.link_count(a, b)) for a, b in zip(*np.triu_indices(stats.k)))

    return {
        'L1': math.fsum(l_star(int(s)) for s in stats.n_alpha),
        'L2': link_bits,
        'L3': float(n * entropy(np.sort(sizes), base=2)),
        'L4': math.fsum(diagonal),
        'L5': math.fsum(cross),
    }


def two_part_cost(stats: BlockStats, n: int) -> CodeLengthReport:
    """
    Two-part cost of a block model: likelihood bits plus model bits.

    Model bits are the block labels (each node of block i pays log2(n / n_i),
    in total n times the partition entropy) plus the l* codes of the link
    counts. Pair multipliers always use the true block sizes; with missing data
    the entropies are taken at the observed densities.
    """
    if stats.n != n:
        raise ValueError(f"block sizes sum to {stats.n}, expected {n}")

    parts = _eq1_parts(stats, n)
    data_bits = parts['L5'] + parts['L4']
    model_bits = math.fsum((parts['L3'], parts['L2']))

    return CodeLengthReport(
        k=stats.k,
        data_bits=data_bits,
        model_bits=model_bits,
        total_bits=math.ceil(data_bits) + model_bits,
        eq1_parts=parts,
    )


def eq1_report(graph: AnyGraph, partition: Partition) -> CodeLengthReport:
    """
    Five-term code length of `graph` given `partition`.

    Model bits are L1 + L2 + L3 (sizes, link counts, partition entropy), data bits
    L4 + L5. The solver's two-part cost leaves L1 out.
    """
    stats = block_stats(graph, partition)
    parts = _eq1_parts(stats, graph.n)
    data_bits = parts['L4'] + parts['L5']
    model_bits = parts['L1'] + parts['L2'] + parts['L3']

    return CodeLengthReport(
        k=stats.k,
        data_bits=data_bits,
        model_bits=model_bits,
        total_bits=math.ceil(data_bits) + model_bits,
        eq1_parts=parts,
    )
