#!/usr/bin/env python3
"""
Sample-based classification of nodes into regular groups.

A block model fitted on a small uniform node sample classifies every other node
from its link counts into the sample blocks alone, so labelling a huge graph costs
a constant amount of work per node. Includes the maximum-likelihood rule, its
Kullback-Leibler form, the ideal classifier under the true model and the
success-rate experiment.
"""
import json
from dataclasses import dataclass
from functools import cached_property
from typing import List, Optional, TextIO, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import rel_entr

from codelength import block_stats
from graph_core import (AnyGraph, DataError, MaskedGraph, Partition, SbmSpec,
                        generate_sbm, pair_count, uniform_sample)
from shard_service import ShardService
from solver import FitResult, SolverConfig, argmax_k, default_epsilon, greedy_mdl


@dataclass(frozen=True, eq=False)
class ClassifierModel:
    """
    Block model estimated on a node sample.

    sample_nodes are ids in the full graph; node sample_nodes[i] sits in block
    sample_labels[i]. density is the empirical density matrix clamped to
    [epsilon, 1 - epsilon]; raw_density keeps the unclamped values.
    """

    k: int
    sample_nodes: np.ndarray
    sample_labels: np.ndarray
    block_sizes: np.ndarray
    raw_density: np.ndarray
    density: np.ndarray
    epsilon: float

    @property
    def n0(self) -> int:
        return int(self.sample_nodes.size)

    @property
    def relative_sizes(self) -> np.ndarray:
        return self.block_sizes / self.n0

    @cached_property
    def membership(self) -> np.ndarray:
        """n0 x k indicator of the sample blocks."""
        return np.eye(self.k)[self.sample_labels]

    @cached_property
    def neg_log_density(self) -> np.ndarray:
        return -np.log(self.density)

    @cached_property
    def neg_log_complement(self) -> np.ndarray:
        return -np.log1p(-self.density)

    def to_dict(self) -> dict:
        return {
            'k': self.k,
            'sample_nodes': self.sample_nodes.tolist(),
            'sample_labels': self.sample_labels.tolist(),
            'block_sizes': self.block_sizes.tolist(),
            'raw_density': self.raw_density.tolist(),
            'density': self.density.tolist(),
            'epsilon': self.epsilon,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ClassifierModel":
        data = json.loads(text)
        return cls(
            k=data['k'],
            sample_nodes=np.asarray(data['sample_nodes'], dtype=np.int64),
            sample_labels=np.asarray(data['sample_labels'], dtype=np.int64),
            block_sizes=np.asarray(data['block_sizes'], dtype=np.int64),
            raw_density=np.asarray(data['raw_density'], dtype=float),
            density=np.asarray(data['density'], dtype=float),
            epsilon=data['epsilon'],
        )


@dataclass(frozen=True, eq=False)
class LinkProfile:
    """Links from one node into each sample block, and the pair counts they come from."""

    links: np.ndarray
    sizes: np.ndarray

    def __post_init__(self):
        if self.links.shape != self.sizes.shape:
            raise ValueError("links and sizes must have the same length")
        if (self.links < 0).any() or (self.links > self.sizes).any():
            raise ValueError("link counts must lie between 0 and the block size")

    @property
    def q(self) -> np.ndarray:
        """Per-block link fractions; 0 for blocks without pairs."""
        return np.divide(self.links, self.sizes, out=np.zeros(self.links.shape), where=self.sizes > 0)


def build_model(sample_graph: AnyGraph, partition: Partition, sample_nodes=None,
                epsilon: Optional[float] = None) -> ClassifierModel:
    """
    Estimate the classifier model from a labelled sample graph.

    Raises:
        ValueError: If a block of the partition is empty
    """
    if partition.n != sample_graph.n:
        raise DataError(f"partition covers {partition.n} nodes but the sample has {sample_graph.n}")
    sizes = partition.block_sizes()
    if (sizes == 0).any():
        raise ValueError(f"sample blocks {np.flatnonzero(sizes == 0).tolist()} are empty")

    epsilon = epsilon or default_epsilon(sample_graph.n)
    stats = block_stats(sample_graph, partition)
    if sample_nodes is None:
        sample_nodes = np.arange(sample_graph.n)
    return ClassifierModel(
        k=partition.k,
        sample_nodes=np.asarray(sample_nodes, dtype=np.int64),
        sample_labels=partition.assignment.copy(),
        block_sizes=sizes,
        raw_density=stats.P,
        density=np.clip(stats.P, epsilon, 1.0 - epsilon),
        epsilon=epsilon,
    )


def link_profiles(nodes, graph: AnyGraph, model: ClassifierModel) -> Tuple[np.ndarray, np.ndarray]:
    """
    Link counts of many nodes into the sample blocks.

    Returns:
        (links, sizes), both len(nodes) x k. Without missing data sizes repeats the
        sample block sizes; with missing data it counts observed pairs only.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    if isinstance(graph, MaskedGraph):
        d, b = graph.sample_columns(nodes, model.sample_nodes)
        return d @ model.membership, b @ model.membership
    links = graph.sample_columns(nodes, model.sample_nodes) @ model.membership
    return links, np.broadcast_to(model.block_sizes.astype(float), links.shape)


def link_profile(v: int, graph: AnyGraph, model: ClassifierModel) -> LinkProfile:
    """Count the links from an out-of-sample node v into each sample block."""
    if v in set(model.sample_nodes.tolist()):
        raise ValueError(f"node {v} belongs to the sample")
    if not 0 <= v < graph.n:
        raise DataError(f"node {v} is not in the graph")
    links, sizes = link_profiles([v], graph, model)
    return LinkProfile(links=links[0], sizes=np.array(sizes[0]))


def classification_costs(links: np.ndarray, sizes: np.ndarray, model: ClassifierModel) -> np.ndarray:
    """
    C_a for every row: sum_j [-e_j log d_ja - (n_j - e_j) log(1 - d_ja)].

    Element-wise products summed over j, so one row scores the same alone or in a batch.
    """
    links = np.atleast_2d(links)
    non_links = np.atleast_2d(sizes) - links
    return ((links[:, :, None] * model.neg_log_density[None]).sum(axis=1)
            + (non_links[:, :, None] * model.neg_log_complement[None]).sum(axis=1))


def classify(profile: LinkProfile, model: ClassifierModel) -> Tuple[int, np.ndarray]:
    """
    Maximum-likelihood block of a profiled node.

    Returns:
        (block index, cost vector); ties go to the smallest index
    """
    costs = classification_costs(profile.links, profile.sizes, model)[0]
    return int(costs.argmin()), costs


def kl_bernoulli(q: float, p: float) -> float:
    """
    Kullback-Leibler divergence I(q:p) between Bernoulli(q) and Bernoulli(p), in nats.

    Raises:
        ValueError: If q or p is out of range, or p is 0 or 1 while q differs
    """
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q}")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    if p in (0.0, 1.0) and q != p:
        raise ValueError(f"divergence is infinite for p={p} and q={q}")
    return float(rel_entr(q, p) + rel_entr(1.0 - q, 1.0 - p))


def _kl_scores(q: np.ndarray, weights: np.ndarray, P: np.ndarray) -> np.ndarray:
    divergence = rel_entr(q[None, :], P) + rel_entr(1.0 - q[None, :], 1.0 - P)
    return (divergence * weights[None, :]).sum(axis=1)


def classify_kl(profile: LinkProfile, model: ClassifierModel) -> int:
    """Block j minimizing sum_i r_i I(q_i : d_ji); same argmin as classify."""
    weights = profile.sizes / profile.sizes.sum()
    return int(_kl_scores(profile.q, weights, model.density).argmin())


def classify_ideal(profile: LinkProfile, P, r) -> int:
    """Block j minimizing sum_i r_i I(q_i : p_ji) under the true model (P, r)."""
    P = np.asarray(P, dtype=float)
    r = np.asarray(r, dtype=float)
    if P.shape != (r.size, r.size) or profile.links.size != r.size:
        raise ValueError("P, r and the profile must agree on the number of blocks")
    if P.min() < 0.0 or P.max() > 1.0:
        raise ValueError("P entries must be probabilities in [0, 1]")
    with np.errstate(divide='ignore'):
        return int(_kl_scores(profile.q, r, P).argmin())


class PartitionExtender(ShardService):
    """Labels every node outside the sample, one chunk of nodes per shard."""

    def __init__(self, graph: AnyGraph, model: ClassifierModel, chunk_size: int = 1024, **kwargs):
        super().__init__(**kwargs)
        if model.sample_nodes.size and model.sample_nodes.max() >= graph.n:
            raise DataError(f"model sample refers to node {model.sample_nodes.max()} "
                            f"but the graph has {graph.n} nodes")
        self.graph = graph
        self.model = model
        self.chunk_size = chunk_size

    def process_shard(self, shard_id: int, nodes: np.ndarray) -> np.ndarray:
        links, sizes = link_profiles(nodes, self.graph, self.model)
        return classification_costs(links, sizes, self.model).argmin(axis=1)

    def extend(self) -> Partition:
        labels = np.empty(self.graph.n, dtype=np.int64)
        labels[self.model.sample_nodes] = self.model.sample_labels
        outside = np.setdiff1d(np.arange(self.graph.n), self.model.sample_nodes)
        if outside.size:
            chunks = np.array_split(outside, -(-outside.size // self.chunk_size))
            self.log(f"Classifying {outside.size} nodes against {self.model.n0} sample nodes "
                     f"in {len(chunks)} shards")
            for nodes, predicted in zip(chunks, self.map_shards(chunks)):
                labels[nodes] = predicted
        return Partition(self.model.k, labels)


def extend_partition(big_graph: AnyGraph, model: ClassifierModel, threads: Optional[int] = None,
                     chunk_size: int = 1024, **kwargs) -> Partition:
    """Partition of all nodes: sample nodes keep their labels, the rest are classified."""
    return PartitionExtender(big_graph, model, chunk_size=chunk_size, threads=threads, **kwargs).extend()


def fit_by_sampling(graph: AnyGraph, n0: int, config: Optional[SolverConfig] = None,
                    seed: Optional[int] = None, **kwargs) -> Tuple[FitResult, ClassifierModel, Partition]:
    """
    Fit a uniform node sample, then classify the rest of the graph from it.

    Empty blocks left by the fit are dropped before the model is built.
    """
    config = config or SolverConfig()
    nodes, sample = uniform_sample(graph, n0, seed)
    fit = greedy_mdl(sample, config, **kwargs)
    model = build_model(sample, fit.partition.compacted(), sample_nodes=nodes)
    full = extend_partition(graph, model, threads=config.threads, **kwargs)
    return fit, model, full


def match_accuracy(truth: Partition, predicted: Partition) -> float:
    """Fraction of nodes labelled correctly under the best one-to-one block matching."""
    if truth.n != predicted.n:
        raise ValueError("partitions cover different node counts")
    confusion = np.zeros((truth.k, predicted.k))
    np.add.at(confusion, (truth.assignment, predicted.assignment), 1)
    rows, cols = linear_sum_assignment(confusion, maximize=True)
    return float(confusion[rows, cols].sum() / truth.n)


def expected_triangles(block_sizes, P) -> float:
    """Expected number of triangles in a block model with the given sizes and densities."""
    sizes = [int(s) for s in block_sizes]
    P = np.asarray(P, dtype=float)
    k = len(sizes)
    total = 0.0
    for a in range(k):
        for b in range(a, k):
            for c in range(b, k):
                if a == b == c:
                    triples = pair_count(sizes[a]) * (sizes[a] - 2) / 3
                elif a == b:
                    triples = pair_count(sizes[a]) * sizes[c]
                elif b == c:
                    triples = sizes[a] * pair_count(sizes[b])
                else:
                    triples = sizes[a] * sizes[b] * sizes[c]
                total += triples * P[a, b] * P[b, c] * P[a, c]
    return total


@dataclass
class SuccessPoint:
    n0: int
    trials: int
    success_fraction: float
    ideal_success_fraction: float = float("nan")
    ideal_disagreement: float = float("nan")


def _map_to_planted(fitted: np.ndarray, planted: np.ndarray, k_fit: int, k_true: int) -> np.ndarray:
    """Map fitted sample blocks onto planted blocks by best matching; unmatched map to -1."""
    confusion = np.zeros((k_fit, k_true))
    np.add.at(confusion, (fitted, planted), 1)
    rows, cols = linear_sum_assignment(confusion, maximize=True)
    mapping = np.full(k_fit, -1)
    mapping[rows] = cols
    return mapping


def _ideal_labels(graph: AnyGraph, picks: np.ndarray, nodes: np.ndarray, sample_truth: np.ndarray,
                  P: np.ndarray, r: np.ndarray) -> np.ndarray:
    membership = np.eye(r.size)[sample_truth]
    links = graph.sample_columns(picks, nodes) @ membership
    sizes = membership.sum(axis=0)
    return np.array([classify_ideal(LinkProfile(row, sizes), P, r) for row in links])


def success_curve(spec: SbmSpec, sample_sizes: List[int], trials: int, instances: int,
                  seed: Optional[int] = None, end_to_end: bool = False,
                  config: Optional[SolverConfig] = None) -> List[SuccessPoint]:
    """
    Classification success rate as a function of the sample size.

    For each sample size and trial a fresh graph is drawn, a uniform sample taken and a
    model built from the sample's planted labels (or, with end_to_end, from a fit of the
    sample); `instances` out-of-sample nodes are then classified and checked against
    their planted blocks. A block missing from the sample cannot be predicted.
    Each point also scores the same nodes with the ideal rule, which knows the true
    (P, r) and the sample's planted labels, and the fraction on which the two disagree.
    """
    if max(sample_sizes) > spec.N - 1:
        raise ValueError(f"sample sizes must leave out-of-sample nodes (N={spec.N})")
    r = spec.relative_sizes
    points = []
    for n0 in sample_sizes:
        correct = ideal_correct = disagreements = 0
        for trial in range(trials):
            graph_seed, sample_seed, pick_seed = (
                int(s) for s in np.random.SeedSequence(seed, spawn_key=(n0, trial)).generate_state(3))
            graph, planted = generate_sbm(SbmSpec(spec.block_sizes, spec.P, graph_seed))
            nodes, sample = uniform_sample(graph, n0, sample_seed)

            if end_to_end:
                trial_config = config or SolverConfig(seed=graph_seed)
                fitted, _ = argmax_k(sample, min(spec.k, n0), trial_config)
                sample_partition = fitted.compacted()
            else:
                present, compact = np.unique(planted.assignment[nodes], return_inverse=True)
                sample_partition = Partition(len(present), compact)
            model = build_model(sample, sample_partition, sample_nodes=nodes)

            outside = np.setdiff1d(np.arange(graph.n), nodes)
            picks = np.random.default_rng(pick_seed).choice(outside, size=instances,
                                                            replace=outside.size < instances)
            links, sizes = link_profiles(picks, graph, model)
            predicted = classification_costs(links, sizes, model).argmin(axis=1)

            if end_to_end:
                mapping = _map_to_planted(sample_partition.assignment, planted.assignment[nodes],
                                          sample_partition.k, spec.k)
            else:
                mapping = present
            labelled = mapping[predicted]
            ideal = _ideal_labels(graph, picks, nodes, planted.assignment[nodes], spec.P, r)
            truth = planted.assignment[picks]
            correct += int((labelled == truth).sum())
            ideal_correct += int((ideal == truth).sum())
            disagreements += int((labelled != ideal).sum())

        total = trials * instances
        points.append(SuccessPoint(n0, trials, correct / total, ideal_correct / total, disagreements / total))
    return points


def write_success_csv(points: List[SuccessPoint], stream: TextIO, header=()):
    for line in header:
        stream.write(f"# {line}\n")
    stream.write("n0,trials,success_fraction,ideal_success_fraction,ideal_disagreement\n")
    for point in points:
        stream.write(f"{point.n0},{point.trials},{point.success_fraction:.6f},"
                     f"{point.ideal_success_fraction:.6f},{point.ideal_disagreement:.6f}\n")
