#!/usr/bin/env python3
"""
Tests: Greedy Solver

Local cost matrix, the Phi step, restarts, the MDL scan over k and the
brute-force oracle on tiny graphs.
"""
import math

import numpy as np
import pytest

from classifier import match_accuracy
from codelength import LinkData, block_stats
from graph_core import (DataError, Graph, Partition, drop_links, equal_blocks_spec, generate_sbm,
                        planted_p_matrix, uniform_p_matrix)
from solver import (FitResult, RegularDecomposition, SolverConfig, argmax_k, default_epsilon,
                    exhaustive_argmin, greedy_mdl, local_cost_matrix, merge_and_split, partition_cost,
                    phi_step, refill_empty_blocks)
from test_graph_core import random_graph, two_cliques


def planted(k: int, N: int, within: float, cross: float, seed: int):
    return generate_sbm(equal_blocks_spec(k, N, planted_p_matrix(k, within, cross), seed))


def cliques(count: int, size: int) -> Graph:
    block = np.ones((size, size), dtype=np.uint8) - np.eye(size, dtype=np.uint8)
    return Graph.from_adjacency(np.kron(np.eye(count, dtype=np.uint8), block))


class TestConfig:
    def test_epsilon(self):
        assert default_epsilon(100) == 1.0 / (2 * 4950)
        assert default_epsilon(2) == 0.25
        assert default_epsilon(1) == 0.25

    def test_validation(self):
        with pytest.raises(ValueError):
            SolverConfig(restarts=0)
        with pytest.raises(ValueError):
            SolverConfig(max_inner_iters=0)
        with pytest.raises(ValueError):
            SolverConfig(k_range=(3, 2))
        with pytest.raises(ValueError):
            SolverConfig(density_clamp_epsilon=0.5)
        with pytest.raises(ValueError):
            SolverConfig(split_merge_rounds=-1)

    def test_k_range(self):
        assert SolverConfig().resolve_k_range(10) == (1, 10)
        assert SolverConfig().resolve_k_range(100) == (1, 25)
        with pytest.raises(ValueError):
            SolverConfig(k_range=(1, 8)).resolve_k_range(5)


class TestLocalCost:
    def test_shape_and_sign(self):
        graph = random_graph(20, 0.4, seed=1)
        partition = Partition.random_valid(20, 3, np.random.default_rng(2))
        L = local_cost_matrix(graph, partition)
        assert L.shape == (20, 3)
        assert (L > 0).all()

    def test_full_mask_is_bit_identical(self):
        graph = random_graph(40, 0.3, seed=3)
        partition = Partition.random_valid(40, 4, np.random.default_rng(4))
        masked = drop_links(graph, 0.0, seed=5)
        assert np.array_equal(local_cost_matrix(graph, partition), local_cost_matrix(masked, partition))

    def test_partition_mismatch(self):
        with pytest.raises(DataError):
            local_cost_matrix(Graph.empty(5), Partition(2, np.array([0, 1, 1])))

    def test_planted_partition_is_a_fixed_point(self):
        partition = Partition(2, np.array([0] * 8 + [1] * 8))
        assert phi_step(two_cliques(8), partition).same_as(partition)

    def test_phi_moves_a_misplaced_node(self):
        start = Partition(2, np.array([0] * 7 + [1] * 9))
        moved = phi_step(two_cliques(8), start)
        assert np.array_equal(moved.assignment, [0] * 8 + [1] * 8)

    def test_ties_go_to_smallest_block(self):
        # an isolated graph gives every block the same cost
        graph = Graph.empty(6)
        partition = Partition(2, np.array([0, 1, 0, 1, 0, 1]))
        assert not phi_step(graph, partition).assignment.any()

    def test_partition_cost_is_sum_of_own_block_entries(self):
        graph = random_graph(15, 0.5, seed=6)
        partition = Partition.random_valid(15, 3, np.random.default_rng(7))
        L = local_cost_matrix(graph, partition)
        assert partition_cost(graph, partition) == pytest.approx(L[np.arange(15), partition.assignment].sum())

    def test_matches_a_per_pair_loop(self):
        graph = random_graph(30, 0.5, seed=50)
        partition = Partition.random_valid(30, 3, np.random.default_rng(51))
        epsilon = default_epsilon(30)
        P = np.clip(block_stats(graph, partition).P, epsilon, 1 - epsilon)
        A = graph.adjacency
        expected = np.zeros((30, 3))
        for i in range(30):
            for a in range(3):
                for j in range(30):
                    if j != i:
                        p = P[a, partition.assignment[j]]
                        expected[i, a] -= math.log(p) if A[i, j] else math.log1p(-p)
        assert np.allclose(local_cost_matrix(graph, partition), expected, rtol=1e-9, atol=0)

    def test_phi_is_idempotent_at_fixed_points(self):
        graph, _ = planted(3, 45, 0.8, 0.1, seed=53)
        rng = np.random.default_rng(54)
        fixed_points = 0
        for _ in range(5):
            current = Partition.random_valid(45, 3, rng)
            for _ in range(50):
                following = phi_step(graph, current)
                if following.same_as(current):
                    break
                current = following
            else:
                continue
            fixed_points += 1
            assert phi_step(graph, phi_step(graph, current)).same_as(current)
        assert fixed_points >= 1


class TestFixedK:
    def test_recovers_two_cliques(self):
        partition, cost = argmax_k(two_cliques(8), 2, SolverConfig(seed=1))
        assert match_accuracy(Partition(2, np.array([0] * 8 + [1] * 8)), partition) == 1.0
        assert cost == pytest.approx(partition_cost(two_cliques(8), partition))

    def test_result_does_not_depend_on_threads(self):
        graph, _ = planted(3, 90, 0.6, 0.2, seed=2)
        fits = [RegularDecomposition(graph, SolverConfig(restarts=8, seed=3, threads=t)).fit_k(3)
                for t in (1, 4)]
        assert fits[0].partition.same_as(fits[1].partition)
        assert fits[0].restart_costs == fits[1].restart_costs
        assert fits[0].iterations == fits[1].iterations

    def test_same_seed_same_fit(self):
        graph, _ = planted(3, 60, 0.7, 0.1, seed=4)
        first = argmax_k(graph, 3, SolverConfig(restarts=4, seed=5))
        second = argmax_k(graph, 3, SolverConfig(restarts=4, seed=5))
        assert first[0].same_as(second[0])
        assert first[1] == second[1]

    def test_iteration_cap(self):
        graph, _ = planted(3, 60, 0.6, 0.3, seed=6)
        fit = RegularDecomposition(graph, SolverConfig(restarts=3, max_inner_iters=1, seed=7)).fit_k(3)
        assert fit.iterations == [1, 1, 1]

    def test_k_out_of_range(self):
        with pytest.raises(ValueError):
            argmax_k(Graph.empty(4), 5)

    def test_restart_callback(self):
        seen = []
        argmax_k(two_cliques(4), 2, SolverConfig(restarts=5, seed=8),
                 on_result=lambda shard_id, result: seen.append(shard_id))
        assert sorted(seen) == [0, 1, 2, 3, 4]

    def test_masked_graph_without_missing_pairs_fits_identically(self):
        graph, _ = planted(3, 60, 0.7, 0.1, seed=9)
        config = SolverConfig(restarts=4, seed=10)
        plain = argmax_k(graph, 3, config)
        masked = argmax_k(drop_links(graph, 0.0, seed=11), 3, config)
        assert plain[0].same_as(masked[0])
        assert plain[1] == masked[1]


class TestEmptyBlocks:
    def test_refill_splits_merged_cliques(self):
        graph = cliques(3, 4)
        merged = Partition(3, np.array([0] * 8 + [1] * 4))
        data = LinkData.of(graph)
        refilled = refill_empty_blocks(data, merged, local_cost_matrix(graph, merged))
        assert np.array_equal(refilled.assignment, [2] * 4 + [0] * 4 + [1] * 4)

    def test_refill_leaves_valid_partitions_alone(self):
        graph = two_cliques(4)
        partition = Partition(2, np.array([0, 1] * 4))
        refilled = refill_empty_blocks(LinkData.of(graph), partition, local_cost_matrix(graph, partition))
        assert refilled.same_as(partition)

    def test_refill_on_a_masked_graph(self):
        masked = drop_links(cliques(3, 4), 0.0, seed=55)
        merged = Partition(3, np.array([0] * 8 + [1] * 4))
        refilled = refill_empty_blocks(LinkData.of(masked), merged, local_cost_matrix(masked, merged))
        assert np.array_equal(refilled.assignment, [2] * 4 + [0] * 4 + [1] * 4)

    def test_merge_and_split_repairs_a_split_block(self):
        graph = cliques(3, 4)
        # first clique split over blocks 0 and 1, the other two merged in block 2
        stuck = Partition(3, np.array([0, 0, 1, 1] + [2] * 8))
        repaired = merge_and_split(LinkData.of(graph), stuck, default_epsilon(12))
        assert np.array_equal(repaired.assignment, [0] * 4 + [1] * 4 + [2] * 4)

    def test_descent_refills_and_recovers(self):
        # tied costs send the split clique to block 0, emptying block 1
        graph = cliques(3, 4)
        stuck = Partition(3, np.array([0, 0, 1, 1] + [2] * 8))
        result = RegularDecomposition(graph, SolverConfig(seed=56)).descend(3, stuck)
        assert result.converged
        assert np.array_equal(result.partition.assignment, [0] * 4 + [1] * 4 + [2] * 4)
        assert result.cost == pytest.approx(partition_cost(graph, result.partition))

    def test_restarts_end_without_empty_blocks(self):
        graph, _ = planted(6, 120, 0.7, 0.05, seed=57)
        fit = RegularDecomposition(graph, SolverConfig(restarts=10, seed=58)).fit_k(6)
        assert fit.partition.is_valid()


class TestOracle:
    def test_two_triangles(self):
        graph = two_cliques(3)
        partition, cost = exhaustive_argmin(graph, 2)
        assert np.array_equal(partition.assignment, [0, 0, 0, 1, 1, 1])
        assert cost == pytest.approx(partition_cost(graph, partition))

    def test_limited_to_tiny_graphs(self):
        with pytest.raises(ValueError):
            exhaustive_argmin(Graph.empty(13), 2)

    def test_path_graph(self):
        graph = Graph.from_edges(6, [0, 1, 2, 3, 4], [1, 2, 3, 4, 5])
        _, best = exhaustive_argmin(graph, 2)
        partition, _ = argmax_k(graph, 2, SolverConfig(restarts=200, seed=59))
        assert partition_cost(graph, partition) == pytest.approx(best, rel=1e-9)

    @pytest.mark.slow
    def test_greedy_reaches_the_global_minimum(self):
        rng = np.random.default_rng(12)
        hits = 0
        for trial in range(50):
            n = int(rng.integers(4, 9))
            k = int(rng.integers(1, 4))
            graph = random_graph(n, 0.5, seed=100 + trial)
            _, best = exhaustive_argmin(graph, k)
            partition, _ = argmax_k(graph, k, SolverConfig(restarts=200, seed=trial))
            hits += partition_cost(graph, partition) <= best + 1e-9
        assert hits >= 48


class TestScan:
    def test_selects_two_cliques(self):
        fit = greedy_mdl(two_cliques(8), SolverConfig(k_range=(1, 4), seed=1))
        assert fit.k_star == 2
        assert sorted(fit.per_k_totals) == [1, 2, 3, 4]
        assert fit.per_k_totals[2] == min(fit.per_k_totals.values())
        assert fit.report.total_bits == fit.per_k_totals[2]
        assert match_accuracy(Partition(2, np.array([0] * 8 + [1] * 8)), fit.partition) == 1.0

    def test_edgeless_graph_has_one_block(self):
        fit = greedy_mdl(Graph.empty(6), SolverConfig(k_range=(1, 3), seed=60))
        assert fit.k_star == 1
        assert fit.report.total_bits == 0.0

    def test_complete_graph_has_one_block(self):
        complete = Graph.from_adjacency(np.ones((5, 5), dtype=np.uint8) - np.eye(5, dtype=np.uint8))
        fit = greedy_mdl(complete, SolverConfig(k_range=(1, 2), seed=61))
        assert fit.k_star == 1

    def test_stop_at_first_minimum(self):
        fit = greedy_mdl(two_cliques(8), SolverConfig(k_range=(1, 6), stop_at_first_minimum=True, seed=2))
        ks = sorted(fit.per_k_totals)
        assert ks == list(range(1, len(ks) + 1))
        last = ks[-1]
        assert last == 6 or fit.per_k_totals[last] > fit.per_k_totals[fit.k_star]
        assert fit.k_star == 2

    def test_records_restarts_and_seed(self):
        fit = greedy_mdl(two_cliques(4), SolverConfig(k_range=(1, 3), restarts=3, seed=3))
        assert fit.seed == 3
        assert all(len(costs) == 3 for costs in fit.restart_costs.values())
        assert set(fit.per_k_reports) == {1, 2, 3}
        assert fit.epsilon == default_epsilon(8)

    def test_fresh_seed_is_recorded(self):
        fit = greedy_mdl(two_cliques(3), SolverConfig(k_range=(1, 2), restarts=2))
        again = greedy_mdl(two_cliques(3), SolverConfig(k_range=(1, 2), restarts=2, seed=fit.seed))
        assert again.partition.same_as(fit.partition)

    def test_json_round_trip(self):
        fit = greedy_mdl(two_cliques(4), SolverConfig(k_range=(1, 3), restarts=3, seed=4))
        again = FitResult.from_json(fit.to_json())
        assert again.k_star == fit.k_star
        assert again.partition.same_as(fit.partition)
        assert again.per_k_totals == fit.per_k_totals
        assert again.report.total_bits == fit.report.total_bits
        assert again.per_k_reports[2].eq1_parts == fit.per_k_reports[2].eq1_parts
        assert np.array_equal(again.density, fit.density)


@pytest.mark.slow
class TestRecovery:
    def test_uniform_densities_ten_blocks(self):
        spec = equal_blocks_spec(10, 1000, uniform_p_matrix(10, seed=21), seed=22)
        graph, truth = generate_sbm(spec)
        partition, _ = argmax_k(graph, 10, SolverConfig(restarts=20, seed=23, threads=None))
        assert match_accuracy(truth, partition) >= 0.99

    def test_model_selection_finds_four_blocks(self):
        found = 0
        for seed in range(10):
            graph, _ = planted(4, 400, 0.8, 0.1, seed=seed)
            fit = greedy_mdl(graph, SolverConfig(k_range=(1, 8), seed=seed, threads=None))
            found += fit.k_star == 4
        assert found >= 9

    def test_thirty_percent_missing(self):
        graph, truth = planted(5, 600, 0.8, 0.1, seed=31)
        masked = drop_links(graph, 0.3, seed=32)
        partition, _ = argmax_k(masked, 5, SolverConfig(seed=33, threads=None))
        assert match_accuracy(truth, partition) >= 0.95
