#!/usr/bin/env python3
"""
Greedy regular decomposition solver.

Fits block structure by repeated simultaneous reassignment of nodes to their
cheapest block (the Phi mapping), with random restarts for a fixed k and a
two-part MDL scan over k. Graphs with missing link data use the same code path
with per-node rescaling of observed contributions.
"""
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from codelength import CodeLengthReport, LinkData, block_stats_from, two_part_cost
from graph_core import AnyGraph, DataError, Partition
from shard_service import ShardService

DEFAULT_MAX_K = 25


def default_epsilon(n: int) -> float:
    """Density floor 1 / (2 C(n, 2)), capped at 0.25 for tiny graphs."""
    pairs = math.comb(n, 2)
    return min(1.0 / (2 * pairs), 0.25) if pairs else 0.25


@dataclass
class SolverConfig:
    """
    Parameters of the greedy fit.

    Args:
        restarts: Random restarts per k
        max_inner_iters: Cap on Phi iterations per restart
        k_range: Inclusive (k_min, k_max); None scans 1..min(n, 25)
        stop_at_first_minimum: Stop the k scan once the total grows past the running minimum
        seed: Base seed; None draws fresh entropy (recorded in the result)
        density_clamp_epsilon: Density floor; None uses default_epsilon(n)
        threads: Concurrent restart workers; None uses all CPUs
        split_merge_rounds: Merge-and-split attempts after a restart converges (k >= 3)
    """

    restarts: int = 20
    max_inner_iters: int = 100
    k_range: Optional[Tuple[int, int]] = None
    stop_at_first_minimum: bool = False
    seed: Optional[int] = None
    density_clamp_epsilon: Optional[float] = None
    threads: Optional[int] = 1
    split_merge_rounds: int = 5

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError(f"restarts must be positive, got {self.restarts}")
        if self.split_merge_rounds < 0:
            raise ValueError(f"split_merge_rounds must be non-negative, got {self.split_merge_rounds}")
        if self.max_inner_iters < 1:
            raise ValueError(f"max_inner_iters must be positive, got {self.max_inner_iters}")
        if self.density_clamp_epsilon is not None and not 0.0 < self.density_clamp_epsilon < 0.5:
            raise ValueError(f"density_clamp_epsilon must lie in (0, 0.5), got {self.density_clamp_epsilon}")
        if self.k_range is not None:
            k_min, k_max = self.k_range
            if not 1 <= k_min <= k_max:
                raise ValueError(f"k_range must satisfy 1 <= k_min <= k_max, got {self.k_range}")
            self.k_range = (int(k_min), int(k_max))

    def resolve_k_range(self, n: int) -> Tuple[int, int]:
        if self.k_range is None:
            return 1, min(n, DEFAULT_MAX_K)
        if self.k_range[1] > n:
            raise ValueError(f"k_range {self.k_range} exceeds the node count {n}")
        return self.k_range

    def epsilon_for(self, n: int) -> float:
        return self.density_clamp_epsilon or default_epsilon(n)


@dataclass
class RestartResult:
    partition: Partition
    cost: float
    iterations: int
    converged: bool


@dataclass
class KFit:
    """Best restart for one k plus the record of all restarts."""

    k: int
    partition: Partition
    cost: float
    restart_costs: List[float]
    iterations: List[int]


def _report_from_dict(report: dict) -> CodeLengthReport:
    return CodeLengthReport(
        k=report['k'],
        data_bits=report['data_bits'],
        model_bits=report['model_bits'],
        total_bits=report['total_bits'],
        eq1_parts={key: report[key] for key in ('L1', 'L2', 'L3', 'L4', 'L5') if key in report},
    )


@dataclass
class FitResult:
    """Outcome of the two-part MDL scan."""

    k_star: int
    partition: Partition
    report: CodeLengthReport
    density: np.ndarray
    per_k_totals: Dict[int, float]
    per_k_reports: Dict[int, CodeLengthReport] = field(default_factory=dict)
    restart_costs: Dict[int, List[float]] = field(default_factory=dict)
    iterations_used: Dict[int, List[int]] = field(default_factory=dict)
    seed: Optional[int] = None
    epsilon: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            'k_star': self.k_star,
            'assignment': self.partition.assignment.tolist(),
            'density': self.density.tolist(),
            'report': self.report.to_dict(),
            'per_k_totals': {str(k): v for k, v in self.per_k_totals.items()},
            'per_k_reports': {str(k): r.to_dict() for k, r in self.per_k_reports.items()},
            'restart_costs': {str(k): v for k, v in self.restart_costs.items()},
            'iterations_used': {str(k): v for k, v in self.iterations_used.items()},
            'seed': self.seed,
            'epsilon': self.epsilon,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "FitResult":
        data = json.loads(text)
        return cls(
            k_star=data['k_star'],
            partition=Partition(data['k_star'], np.asarray(data['assignment'])),
            report=_report_from_dict(data['report']),
            density=np.asarray(data['density'], dtype=float),
            per_k_totals={int(k): v for k, v in data['per_k_totals'].items()},
            per_k_reports={int(k): _report_from_dict(r) for k, r in data.get('per_k_reports', {}).items()},
            restart_costs={int(k): v for k, v in data.get('restart_costs', {}).items()},
            iterations_used={int(k): v for k, v in data.get('iterations_used', {}).items()},
            seed=data.get('seed'),
            epsilon=data.get('epsilon'),
        )


def _cost_matrix(data: LinkData, partition: Partition, epsilon: float) -> np.ndarray:
    stats = block_stats_from(data, partition)
    assert np.array_equal(stats.P, stats.P.T), "density matrix must be symmetric"
    P = np.clip(stats.P, epsilon, 1.0 - epsilon)

    R = partition.indicator()
    links = data.D @ R
    # pairs from node i into block b, excluding the pair (i, i)
    true_pairs = stats.n_alpha[None, :] - R
    observed = data.B @ R if data.masked else true_pairs
    scale = np.divide(true_pairs, observed, out=np.zeros_like(true_pairs), where=observed > 0)

    return -((links * scale) @ np.log(P) + ((observed - links) * scale) @ np.log1p(-P))


def _group_densities(data: LinkData, rows: np.ndarray, groups: np.ndarray) -> np.ndarray:
    """Observed link density from each of `rows` into each node group (columns of an n x c 0/1 matrix)."""
    links = data.D[rows] @ groups
    pairs = data.B[rows] @ groups if data.masked else groups.sum(axis=0)[None, :] - groups[rows]
    return np.divide(links, pairs, out=np.zeros_like(links), where=pairs > 0)


def refill_empty_blocks(data: LinkData, partition: Partition, L: np.ndarray) -> Partition:
    """
    Give every empty block a share of the largest block.

    The largest block's worst-fitting node under L moves out, together with every
    member whose density profile lies closer to that node's than to the block mean.
    A profile holds the densities into every block and into the members linked and
    not linked to the moving node. An empty block clamps to the density floor and
    would never be re-entered.
    """
    assignment = partition.assignment.copy()
    k = partition.k
    while True:
        sizes = np.bincount(assignment, minlength=k)
        empty = np.flatnonzero(sizes == 0)
        if not empty.size:
            return Partition(k, assignment)

        donor = int(sizes.argmax())
        members = np.flatnonzero(assignment == donor)
        position = int(L[members, donor].argmax())
        seed = members[position]

        linked = np.zeros(data.n)
        linked[members] = data.D[seed, members]
        unlinked = np.zeros(data.n)
        unlinked[members] = (data.B[seed, members] if data.masked else 1.0) - linked[members]
        unlinked[seed] = 0.0
        groups = np.column_stack([Partition(k, assignment).indicator(), linked, unlinked])
        profile = _group_densities(data, members, groups)

        to_seed = np.linalg.norm(profile - profile[position], axis=1)
        to_mean = np.linalg.norm(profile - profile.mean(axis=0), axis=1)
        moving = to_seed < to_mean
        if moving.all():
            moving[:] = False
        moving[position] = True
        assignment[members[moving]] = empty[0]


def merge_and_split(data: LinkData, partition: Partition, epsilon: float) -> Partition:
    """
    Merge the two blocks with the closest density rows, then refill the freed
    block from the largest one. Starting point for another descent out of a
    fixed point that splits one true block and merges two others.
    """
    stats = block_stats_from(data, partition)
    P = np.clip(stats.P, epsilon, 1.0 - epsilon)
    distance = np.linalg.norm(P[:, None, :] - P[None, :, :], axis=2)
    distance[np.tril_indices(partition.k)] = np.inf
    a, b = np.unravel_index(int(distance.argmin()), distance.shape)

    merged = Partition(partition.k, np.where(partition.assignment == b, a, partition.assignment))
    return refill_empty_blocks(data, merged, _cost_matrix(data, merged, epsilon))


def local_cost_matrix(graph: AnyGraph, partition: Partition, epsilon: Optional[float] = None) -> np.ndarray:
    """
    The n x k matrix L(R): entry (i, a) is the cost in nats of the links of node i
    if i sat in block a, under the current (clamped) block densities.

    With missing data only observed pairs are summed, and each block's partial sum
    is scaled up to the block's true size; blocks without observed pairs add nothing.
    """
    if partition.n != graph.n:
        raise DataError(f"partition covers {partition.n} nodes but the graph has {graph.n}")
    return _cost_matrix(LinkData.of(graph), partition, epsilon or default_epsilon(graph.n))


def phi_step(graph: AnyGraph, partition: Partition, epsilon: Optional[float] = None) -> Partition:
    """Move every node at once to its cheapest block; ties go to the smallest index."""
    L = local_cost_matrix(graph, partition, epsilon)
    return Partition(partition.k, L.argmin(axis=1))


def partition_cost(graph: AnyGraph, partition: Partition, epsilon: Optional[float] = None) -> float:
    """Sum over nodes of the cost of staying in their current block."""
    L = local_cost_matrix(graph, partition, epsilon)
    return float(L[np.arange(graph.n), partition.assignment].sum())


def exhaustive_argmin(graph: AnyGraph, k: int, epsilon: Optional[float] = None) -> Tuple[Partition, float]:
    """
    Brute-force minimum of partition_cost over all valid k-block partitions.

    Only one labeling per partition is visited (first occurrences of blocks appear
    in order 0, 1, ...). Meant for tiny graphs.
    """
    if graph.n > 12:
        raise ValueError(f"exhaustive enumeration is limited to 12 nodes, got {graph.n}")
    best: Optional[Tuple[Partition, float]] = None
    for assignment in itertools.product(range(k), repeat=graph.n):
        highest = -1
        canonical = True
        for block in assignment:
            if block > highest + 1:
                canonical = False
                break
            highest = max(highest, block)
        if not canonical or highest != k - 1:
            continue
        partition = Partition(k, np.asarray(assignment))
        cost = partition_cost(graph, partition, epsilon)
        if best is None or cost < best[1]:
            best = (partition, cost)
    if best is None:
        raise ValueError(f"no valid {k}-block partition of {graph.n} nodes")
    return best


class RegularDecomposition(ShardService):
    """
    Greedy regular decomposition of one graph.

    Each restart is a shard: it draws a random partition without empty blocks and
    iterates the Phi mapping, refilling any block that empties, until a fixed
    point, a repeated partition or the iteration cap. Restarts own their random
    stream, so results do not depend on how many workers run them.
    """

    def __init__(self, graph: AnyGraph, config: Optional[SolverConfig] = None, **kwargs):
        self.config = config or SolverConfig()
        super().__init__(threads=self.config.threads, **kwargs)
        self.graph = graph
        self.data = LinkData.of(graph)
        self.epsilon = self.config.epsilon_for(graph.n)
        self.seed = self.config.seed if self.config.seed is not None else int(np.random.SeedSequence().entropy)

    def restart_seeds(self, k: int) -> List[np.random.SeedSequence]:
        return np.random.SeedSequence(self.seed, spawn_key=(k,)).spawn(self.config.restarts)

    def process_shard(self, shard_id: int, payload: Tuple[int, np.random.SeedSequence]) -> RestartResult:
        k, seed_seq = payload
        rng = np.random.default_rng(seed_seq)
        result = self.descend(k, Partition.random_valid(self.graph.n, k, rng), shard_id)

        for _ in range(self.config.split_merge_rounds if k >= 3 else 0):
            if not result.converged:
                break
            trial = self.descend(k, merge_and_split(self.data, result.partition, self.epsilon), shard_id)
            if trial.cost >= result.cost:
                break
            self.log_debug(f"[{self.worker_name(shard_id)}] k={k} restart {shard_id} "
                           f"split-merge lowered the cost to {trial.cost:.1f}")
            result = RestartResult(trial.partition, trial.cost, result.iterations + trial.iterations, trial.converged)
        return result

    def descend(self, k: int, current: Partition, shard_id: int = 0) -> RestartResult:
        """Iterate Phi from `current`; returns the cheapest partition visited."""
        best: Optional[Tuple[Partition, float]] = None
        seen = set()

        for iteration in range(1, self.config.max_inner_iters + 1):
            L = _cost_matrix(self.data, current, self.epsilon)
            cost = float(L.min(axis=1).sum())
            if best is None or cost < best[1]:
                best = (current, cost)

            following = Partition(k, L.argmin(axis=1))
            if not following.is_valid():
                following = refill_empty_blocks(self.data, following, L)
            if following.same_as(current):
                return RestartResult(current, cost, iteration, converged=True)

            seen.add(current.assignment.tobytes())
            if following.assignment.tobytes() in seen:
                self.log_debug(f"[{self.worker_name(shard_id)}] k={k} restart {shard_id} cycled after {iteration} steps")
                break
            current = following

        return RestartResult(best[0], best[1], iteration, converged=False)

    def fit_k(self, k: int) -> KFit:
        """Best of `restarts` greedy runs for a fixed k; ties go to the earliest restart."""
        if not 1 <= k <= self.graph.n:
            raise ValueError(f"k must lie in [1, {self.graph.n}], got {k}")
        results = self.map_shards([(k, seed_seq) for seed_seq in self.restart_seeds(k)])

        best = 0
        for m, result in enumerate(results):
            if result.cost < results[best].cost:
                best = m
        unconverged = sum(not r.converged for r in results)
        if unconverged:
            self.log_debug(f"k={k}: {unconverged} of {len(results)} restarts stopped without a fixed point")

        return KFit(
            k=k,
            partition=results[best].partition,
            cost=results[best].cost,
            restart_costs=[r.cost for r in results],
            iterations=[r.iterations for r in results],
        )

    def scan(self) -> FitResult:
        """Two-part MDL scan over the configured k range."""
        n = self.graph.n
        k_min, k_max = self.config.resolve_k_range(n)
        self.log(f"Scanning k={k_min}..{k_max} on {n} nodes ({self.config.restarts} restarts, seed {self.seed})")

        per_k: Dict[int, float] = {}
        reports: Dict[int, CodeLengthReport] = {}
        restart_costs: Dict[int, List[float]] = {}
        iterations: Dict[int, List[int]] = {}
        best: Optional[Tuple[KFit, CodeLengthReport, np.ndarray]] = None

        for k in range(k_min, k_max + 1):
            fit = self.fit_k(k)
            stats = block_stats_from(self.data, fit.partition)
            report = two_part_cost(stats, n)
            per_k[k] = report.total_bits
            reports[k] = report
            restart_costs[k] = fit.restart_costs
            iterations[k] = fit.iterations
            self.log(f"k={k}: total {report.total_bits:.1f} bits "
                     f"(data {report.data_bits:.1f}, model {report.model_bits:.1f})")

            if best is None or report.total_bits < best[1].total_bits:
                best = (fit, report, stats.P)
            elif self.config.stop_at_first_minimum and report.total_bits > best[1].total_bits:
                self.log(f"Total grew past the minimum at k={best[0].k}; stopping scan")
                break

        fit, report, density = best
        self.log(f"Selected k*={fit.k} with {report.total_bits:.1f} bits")
        return FitResult(
            k_star=fit.k,
            partition=fit.partition,
            report=report,
            density=density,
            per_k_totals=per_k,
            per_k_reports=reports,
            restart_costs=restart_costs,
            iterations_used=iterations,
            seed=self.seed,
            epsilon=self.epsilon,
        )


def argmax_k(graph: AnyGraph, k: int, config: Optional[SolverConfig] = None, **kwargs) -> Tuple[Partition, float]:
    """
    Regular decomposition for a fixed k.

    Returns:
        (best partition, its cost l = sum_i min_a L(R)_{i,a})
    """
    fit = RegularDecomposition(graph, config, **kwargs).fit_k(k)
    return fit.partition, fit.cost


def greedy_mdl(graph: AnyGraph, config: Optional[SolverConfig] = None, **kwargs) -> FitResult:
    """Choose k and the partition minimizing the two-part code length."""
    return RegularDecomposition(graph, config, **kwargs).scan()
