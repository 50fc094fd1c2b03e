#!/usr/bin/env python3
"""
rd - regular decomposition from the command line.

Subcommands:
    generate    draw a block model graph and its planted labels
    fit         fit block structure (optionally on a node sample)
    classify    label every node of a graph with a fitted model
    experiment  success-curve, mdl-scan or missing-sweep CSVs
    render      chessboard view of a labelled graph as a PGM image

Every run writes manifest.json to --out-dir; the other outputs point at it.

Exit codes: 0 success, 1 usage error, 2 data error.
"""
import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from typing import BinaryIO, Dict, List, Optional

import numpy as np

from classifier import (ClassifierModel, build_model, extend_partition, fit_by_sampling,
                        success_curve, write_success_csv)
from experiments import missing_sweep, mdl_scan, write_scan_csv, write_sweep_csv
from graph_core import (AnyGraph, DataError, MaskedGraph, Partition, SbmSpec, drop_links,
                        equal_blocks_spec, generate_sbm, load_edge_list, load_labels,
                        load_ternary_matrix, planted_p_matrix, uniform_p_matrix,
                        write_edge_list, write_labels, write_ternary_matrix)
from solver import SolverConfig, greedy_mdl

MANIFEST_NAME = 'manifest.json'
MANIFEST_REF = f"manifest: {MANIFEST_NAME}"
RENDER_MAX_NODES = 2 ** 14

# Pixel values of the rendered matrix
LINK, NON_LINK, MISSING = 0, 255, 128

EXPERIMENT_DEFAULTS = {
    'success-curve': dict(k=10, n=2000, sample_sizes='50,100,150,200,300', trials=10, instances=100),
    'mdl-scan': dict(k=4, n=400, within=0.8, cross=0.1, k_min=1, k_max=8),
    'missing-sweep': dict(k=5, n=600, within=0.8, cross=0.1, fractions='0,0.2,0.4,0.6'),
}

logger = logging.getLogger('rd')


class UsageError(Exception):
    """Command line could not be parsed."""


class RdArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


@dataclass
class RunManifest:
    """Record of one command run: parameters, seed, files and timings."""

    command: str
    parameters: Dict[str, object]
    seed: Optional[int] = None
    inputs: List[str] = field(default_factory=list)
    outputs: List[str] = field(default_factory=list)
    timings: Dict[str, float] = field(default_factory=dict)

    def write(self, out_dir: str) -> str:
        path = os.path.join(out_dir, MANIFEST_NAME)
        with open(path, 'w', newline='\n') as f:
            json.dump(asdict(self), f, indent=2, sort_keys=True)
            f.write('\n')
        return path


class Run:
    """State shared by the subcommands: arguments, manifest, output directory."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.out_dir = args.out_dir
        os.makedirs(self.out_dir, exist_ok=True)
        self.seed = args.seed
        if self.seed is None and getattr(args, 'needs_seed', False):
            self.seed = int(np.random.SeedSequence().generate_state(1)[0])
            self.say(f"No --seed given, using seed {self.seed}")
        parameters = {k: v for k, v in vars(args).items() if k not in ('handler', 'needs_seed')}
        self.manifest = RunManifest(command=args.command, parameters=parameters, seed=self.seed)

    @property
    def service_kwargs(self) -> dict:
        return {'use_logging': self.args.use_logging}

    def say(self, message: str):
        if self.args.use_logging:
            logger.info(message)
        else:
            print(message)

    def path(self, name: str) -> str:
        path = os.path.join(self.out_dir, name)
        self.manifest.outputs.append(path)
        return path

    def open_text(self, name: str):
        return open(self.path(name), 'w', newline='\n')

    def read_graph(self, path: str) -> AnyGraph:
        self.manifest.inputs.append(path)
        return read_graph(path, n=getattr(self.args, 'n', None), masked=getattr(self.args, 'masked', False))

    def finish(self):
        self.manifest.write(self.out_dir)


def read_graph(path: str, n: Optional[int] = None, masked: bool = False) -> AnyGraph:
    """
    Load an edge list, or a ternary CSV matrix when `masked` is set or the file ends in .csv.

    The node count of an edge list comes from `n`, else from a "# nodes: N" header,
    else from the largest node id.
    """
    with open(path) as f:
        if masked or path.endswith('.csv'):
            return load_ternary_matrix(f)
        lines = f.readlines()
    if n is None:
        n = _header_node_count(lines)
    if n is None:
        ids = [int(x) for line in lines for x in line.split('#', 1)[0].split() if x.lstrip('-').isdigit()]
        if not ids:
            raise DataError(f"{path}: cannot infer the node count of an empty edge list; pass --n")
        n = max(ids) + 1
    return load_edge_list(iter(lines), n)


def _header_node_count(lines: List[str]) -> Optional[int]:
    for line in lines:
        if not line.startswith('#'):
            break
        key, _, value = line[1:].partition(':')
        if key.strip() == 'nodes':
            try:
                return int(value)
            except ValueError:
                raise DataError(f"bad node count header {line.strip()!r}") from None
    return None


def _parse_list(text: str, kind=float) -> list:
    try:
        return [kind(x) for x in text.split(',') if x.strip()]
    except ValueError:
        raise ValueError(f"expected a comma-separated list, got {text!r}") from None


def solver_config(args: argparse.Namespace, seed: Optional[int]) -> SolverConfig:
    k_range = None
    if args.k_min is not None or args.k_max is not None:
        k_range = (args.k_min or 1, args.k_max or args.k_min)
    return SolverConfig(
        restarts=args.restarts,
        max_inner_iters=args.max_inner_iters,
        k_range=k_range,
        stop_at_first_minimum=args.stop_at_first_min,
        seed=seed,
        threads=args.threads,
    )


def planted_spec(args: argparse.Namespace, seed: int) -> SbmSpec:
    """Equal blocks with planted within/cross densities, or a seeded Uniform(0, 1) matrix."""
    if args.within is not None:
        P = planted_p_matrix(args.k, args.within, args.cross if args.cross is not None else 0.0)
    else:
        P = uniform_p_matrix(args.k, seed)
    return equal_blocks_spec(args.k, args.n, P, seed)


def cmd_generate(run: Run):
    args = run.args
    if args.spec:
        run.manifest.inputs.append(args.spec)
        with open(args.spec) as f:
            data = json.load(f)
        data['seed'] = run.seed
        spec = SbmSpec.from_dict(data)
    else:
        spec = planted_spec(args, run.seed)
    run.manifest.parameters['sbm'] = spec.to_dict()

    started = time.perf_counter()
    graph, planted = generate_sbm(spec)
    run.manifest.timings['generate_s'] = time.perf_counter() - started

    header = [MANIFEST_REF, f"nodes: {graph.n}"]
    with run.open_text('graph.edges') as f:
        write_edge_list(graph, f, header)
    with run.open_text('labels.csv') as f:
        write_labels(planted, f, [MANIFEST_REF])
    if args.drop_fraction is not None:
        masked = drop_links(graph, args.drop_fraction, seed=run.seed)
        with run.open_text('masked.csv') as f:
            write_ternary_matrix(masked, f, [MANIFEST_REF])
    run.say(f"Generated {graph.n} nodes, {graph.edge_count} links, {spec.k} blocks")


def cmd_fit(run: Run):
    args = run.args
    graph = run.read_graph(args.graph)
    config = solver_config(args, run.seed)

    started = time.perf_counter()
    if args.sample_size is not None:
        fit, model, labels = fit_by_sampling(graph, args.sample_size, config, seed=run.seed, **run.service_kwargs)
    else:
        fit = greedy_mdl(graph, config, **run.service_kwargs)
        labels = fit.partition.compacted()
        model = build_model(graph, labels)
    run.manifest.timings['fit_s'] = time.perf_counter() - started

    run.say("k\ttotal_bits")
    for k, total in sorted(fit.per_k_totals.items()):
        run.say(f"{k}\t{total:.3f}")
    run.say(f"k* = {fit.k_star}")

    with run.open_text('fit.json') as f:
        json.dump({'manifest': MANIFEST_NAME, **fit.to_dict()}, f, indent=2)
    with run.open_text('model.json') as f:
        json.dump({'manifest': MANIFEST_NAME, **model.to_dict()}, f, indent=2)
    with run.open_text('labels.csv') as f:
        write_labels(labels, f, [MANIFEST_REF])


def cmd_classify(run: Run):
    args = run.args
    run.manifest.inputs.append(args.model)
    with open(args.model) as f:
        model = ClassifierModel.from_json(f.read())
    graph = run.read_graph(args.graph)

    started = time.perf_counter()
    labels = extend_partition(graph, model, threads=args.threads, **run.service_kwargs)
    elapsed = time.perf_counter() - started
    run.manifest.timings['classify_s'] = elapsed
    run.manifest.timings['per_node_us'] = 1e6 * elapsed / graph.n

    with run.open_text('labels.csv') as f:
        write_labels(labels, f, [MANIFEST_REF])
    run.say(f"Classified {graph.n} nodes in {elapsed:.3f} s ({1e6 * elapsed / graph.n:.1f} us per node)")


def cmd_experiment(run: Run):
    args = run.args
    for key, value in EXPERIMENT_DEFAULTS[args.kind].items():
        if getattr(args, key, None) is None:
            setattr(args, key, value)
            run.manifest.parameters[key] = value
    spec = planted_spec(args, run.seed)
    header = [MANIFEST_REF, f"kind: {args.kind}", f"seed: {run.seed}"]

    started = time.perf_counter()
    if args.kind == 'success-curve':
        config = SolverConfig(restarts=args.restarts, seed=run.seed, threads=args.threads) if args.end_to_end else None
        points = success_curve(spec, _parse_list(args.sample_sizes, int), args.trials, args.instances,
                               seed=run.seed, end_to_end=args.end_to_end, config=config)
        with run.open_text('success_curve.csv') as f:
            write_success_csv(points, f, header)
        for point in points:
            run.say(f"n0={point.n0}: success {point.success_fraction:.3f} "
                    f"(ideal rule {point.ideal_success_fraction:.3f}, disagreement {point.ideal_disagreement:.3f})")
    elif args.kind == 'mdl-scan':
        fit, rows, accuracy = mdl_scan(spec, solver_config(args, run.seed), **run.service_kwargs)
        with run.open_text('mdl_scan.csv') as f:
            write_scan_csv(rows, f, header)
        run.say(f"k* = {fit.k_star}, accuracy {accuracy:.3f}")
    else:
        config = SolverConfig(restarts=args.restarts, max_inner_iters=args.max_inner_iters,
                              seed=run.seed, threads=args.threads)
        rows = missing_sweep(spec, _parse_list(args.fractions), config, **run.service_kwargs)
        with run.open_text('missing_sweep.csv') as f:
            write_sweep_csv(rows, f, header)
        for row in rows:
            run.say(f"q={row.q}: accuracy {row.accuracy:.3f}")
    run.manifest.timings['experiment_s'] = time.perf_counter() - started


def render_matrix(graph: AnyGraph, partition: Partition, max_nodes: int = RENDER_MAX_NODES,
                  seed: Optional[int] = None) -> np.ndarray:
    """
    Adjacency as 8-bit pixels with rows and columns sorted by block, then node id.

    Links are black, non-links white and missing pairs gray. Graphs above max_nodes
    are rendered on a uniform node subsample.
    """
    if partition.n != graph.n:
        raise DataError(f"labels cover {partition.n} nodes but the graph has {graph.n}")
    nodes = np.arange(graph.n)
    if graph.n > max_nodes:
        nodes = np.sort(np.random.default_rng(seed).choice(graph.n, size=max_nodes, replace=False))
    order = nodes[np.lexsort((nodes, partition.assignment[nodes]))]

    if isinstance(graph, MaskedGraph):
        d, b = graph.sample_columns(order, order)
        return np.where(b == 0, MISSING, np.where(d == 1, LINK, NON_LINK)).astype(np.uint8)
    links = graph.sample_columns(order, order)
    return np.where(links == 1, LINK, NON_LINK).astype(np.uint8)


def write_pgm(pixels: np.ndarray, stream: BinaryIO, comments=()):
    """Binary greyscale PGM (P5), maxval 255."""
    height, width = pixels.shape
    stream.write(b"P5\n")
    for line in comments:
        stream.write(f"# {line}\n".encode('ascii'))
    stream.write(f"{width} {height}\n255\n".encode('ascii'))
    stream.write(np.ascontiguousarray(pixels, dtype=np.uint8).tobytes())


def cmd_render(run: Run):
    args = run.args
    graph = run.read_graph(args.graph)
    run.manifest.inputs.append(args.labels)
    with open(args.labels) as f:
        partition = load_labels(f)
    if graph.n > args.max_nodes:
        run.say(f"Graph has {graph.n} nodes; rendering a sample of {args.max_nodes} (seed {run.seed})")

    pixels = render_matrix(graph, partition, args.max_nodes, run.seed)
    with open(run.path(args.output), 'wb') as f:
        write_pgm(pixels, f, [MANIFEST_REF])
    run.say(f"Wrote {pixels.shape[1]}x{pixels.shape[0]} image")


def build_parser() -> RdArgumentParser:
    common = RdArgumentParser(add_help=False)
    common.add_argument('--seed', type=int, help='Base seed; drawn and logged when omitted')
    common.add_argument('--threads', type=int, help='Concurrent workers (default: all CPUs)')
    common.add_argument('--out-dir', default='.', help='Directory for outputs and manifest.json')
    common.add_argument('--use-logging', action='store_true', help='Log through logging instead of print')
    common.add_argument('--log-level', default='INFO', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])

    solver = RdArgumentParser(add_help=False)
    solver.add_argument('--k-min', type=int)
    solver.add_argument('--k-max', type=int)
    solver.add_argument('--restarts', type=int, default=20)
    solver.add_argument('--max-inner-iters', type=int, default=100)
    solver.add_argument('--stop-at-first-min', action='store_true')

    graph_input = RdArgumentParser(add_help=False)
    graph_input.add_argument('graph', help='Edge list, or ternary CSV matrix (.csv)')
    graph_input.add_argument('--masked', action='store_true', help='Read the graph as a ternary CSV matrix')
    graph_input.add_argument('--n', type=int, help='Node count of an edge list')

    model = RdArgumentParser(add_help=False)
    model.add_argument('--k', type=int, help='Number of blocks')
    model.add_argument('--n', type=int, help='Number of nodes')
    model.add_argument('--within', type=float, help='Within-block density (default: Uniform(0,1) matrix)')
    model.add_argument('--cross', type=float, help='Cross-block density')

    parser = RdArgumentParser(prog='rd', description='Regular decomposition of graphs')
    commands = parser.add_subparsers(dest='command', required=True)

    generate = commands.add_parser('generate', parents=[common, model], help='Draw a block model graph')
    generate.add_argument('--spec', help='JSON file with block_sizes and P')
    generate.add_argument('--drop-fraction', type=float, help='Also write a masked copy missing this fraction of pairs')
    generate.set_defaults(handler=cmd_generate, needs_seed=True)

    fit = commands.add_parser('fit', parents=[common, solver, graph_input], help='Fit block structure')
    fit.add_argument('--sample-size', type=int, help='Fit a uniform sample of this many nodes, then classify the rest')
    fit.set_defaults(handler=cmd_fit, needs_seed=True)

    classify = commands.add_parser('classify', parents=[common, graph_input], help='Label nodes with a model')
    classify.add_argument('model', help='model.json written by fit')
    classify.set_defaults(handler=cmd_classify, needs_seed=False)

    experiment = commands.add_parser('experiment', parents=[common, solver, model], help='Run an experiment')
    experiment.add_argument('kind', choices=sorted(EXPERIMENT_DEFAULTS))
    experiment.add_argument('--sample-sizes', help='success-curve sample sizes, comma-separated')
    experiment.add_argument('--trials', type=int)
    experiment.add_argument('--instances', type=int)
    experiment.add_argument('--end-to-end', action='store_true', help='success-curve: fit the sample instead of using planted labels')
    experiment.add_argument('--fractions', help='missing-sweep fractions, comma-separated')
    experiment.set_defaults(handler=cmd_experiment, needs_seed=True)

    render = commands.add_parser('render', parents=[common, graph_input], help='Render the sorted adjacency matrix')
    render.add_argument('labels', help='node_id,block label file')
    render.add_argument('--output', default='render.pgm')
    render.add_argument('--max-nodes', type=int, default=RENDER_MAX_NODES)
    render.set_defaults(handler=cmd_render, needs_seed=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.use_logging:
            logging.basicConfig(
                level=getattr(logging, args.log_level),
                format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
                datefmt='%H:%M:%S'
            )
        if args.command == 'generate' and args.spec is None and (args.k is None or args.n is None):
            parser.error("generate needs --spec or both --k and --n")
        run = Run(args)
        args.handler(run)
        run.finish()
    except UsageError as e:
        print(f"rd: error: {e}", file=sys.stderr)
        return 1
    except (DataError, OSError) as e:
        print(f"rd: data error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"rd: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main())
