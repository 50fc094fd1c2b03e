#!/usr/bin/env python3
"""
Seeded experiments on planted block models: model selection and robustness to
missing link data. The classifier success curve lives in classifier.py.
"""
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, TextIO

import numpy as np

from classifier import match_accuracy
from graph_core import SbmSpec, drop_links, generate_sbm
from solver import FitResult, SolverConfig, argmax_k, greedy_mdl


@dataclass
class ScanRow:
    k: int
    total_bits: float
    data_bits: float
    model_bits: float


@dataclass
class SweepRow:
    q: float
    accuracy: float


def mdl_scan(spec: SbmSpec, config: SolverConfig, **kwargs) -> tuple:
    """
    Draw a graph from `spec` and run the two-part MDL scan on it.

    Returns:
        (FitResult, rows with the cost breakdown per k, accuracy of the selected partition)
    """
    graph, planted = generate_sbm(spec)
    fit: FitResult = greedy_mdl(graph, config, **kwargs)
    rows = [ScanRow(k, r.total_bits, r.data_bits, r.model_bits) for k, r in sorted(fit.per_k_reports.items())]
    return fit, rows, match_accuracy(planted, fit.partition)


def missing_sweep(spec: SbmSpec, fractions: Sequence[float], config: SolverConfig,
                  k: Optional[int] = None, **kwargs) -> List[SweepRow]:
    """
    Recovery accuracy of the masked fit as link data is deleted.

    One graph is drawn; for each fraction q its links are dropped with a seed derived
    from the SbmSpec seed and q's position, then k blocks are fitted on the masked graph.
    """
    graph, planted = generate_sbm(spec)
    k = k or spec.k
    rows = []
    for position, q in enumerate(fractions):
        drop_seed = int(np.random.SeedSequence(spec.seed, spawn_key=(position,)).generate_state(1)[0])
        masked = drop_links(graph, q, seed=drop_seed)
        partition, _ = argmax_k(masked, k, replace(config, k_range=None), **kwargs)
        rows.append(SweepRow(q, match_accuracy(planted, partition)))
    return rows


def write_scan_csv(rows: List[ScanRow], stream: TextIO, header=()):
    for line in header:
        stream.write(f"# {line}\n")
    stream.write("k,total_bits,data_bits,model_bits\n")
    for row in rows:
        stream.write(f"{row.k},{row.total_bits:.6f},{row.data_bits:.6f},{row.model_bits:.6f}\n")


def write_sweep_csv(rows: List[SweepRow], stream: TextIO, header=()):
    for line in header:
        stream.write(f"# {line}\n")
    stream.write("q,accuracy\n")
    for row in rows:
        stream.write(f"{row.q},{row.accuracy:.6f}\n")
