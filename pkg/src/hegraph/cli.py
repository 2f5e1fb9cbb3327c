"""``hegraph`` command line: keygen, compile, run, bench.

Exit codes: 0 success, 1 usage or parse error, 2 depth exceeded,
3 capacity (batch larger than the slot count), 4 I/O.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import bench as B
from .backends import BACKENDS, make_backend
from .graph import Graph, GraphError, infer_shapes, load, load_tensor, save, save_tensor
from .he.backend import LevelExhaustedError
from .he.context import ContextError, make_context
from .he.packing import CapacityError
from .he.serialization import FormatError, load_keys, save_keys
from .models import SHIPPED, load_shipped
from .passes import PassId, parse_passes, run_pipeline
from .runtime.bypass import BypassConfig
from .runtime.executor import DepthExceededError, Paradigm, execute

EXIT_OK, EXIT_USAGE, EXIT_DEPTH, EXIT_CAPACITY, EXIT_IO = 0, 1, 2, 3, 4
_ALIASES = {"cifar": "cifar10"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _add_context_flags(p, required=False):
    g = p.add_argument_group("encryption context")
    g.add_argument("--scheme", default="ckks-ref", choices=sorted(BACKENDS))
    g.add_argument("--poly-degree", type=int, default=8192, help="ring degree N (power of two)")
    g.add_argument("--moduli-bits", type=_int_list, default=[30] * 7, help="bit sizes of the modulus chain")
    g.add_argument("--scale-bits", type=int, default=30, help="log2 of the encoding scale")
    g.add_argument("--lambda", dest="security_lambda", type=int, default=128, help="security level (metadata)")


def _add_bypass_flags(p):
    g = p.add_argument_group("special-value bypass")
    g.add_argument("--no-opt-mult", action="store_true", help="disable multiply bypass for 0 and +-1")
    g.add_argument("--no-opt-add", action="store_true", help="disable add bypass for 0")
    g.add_argument("--epsilon", type=float, default=0.0, help="tolerance for classifying special plaintexts")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="hegraph", description="Compile and run tensor graphs under homomorphic encryption.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("keygen", help="generate a key file")
    _add_context_flags(p)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--public-only", action="store_true", help="omit the secret key")
    p.add_argument("-o", "--out", required=True, help="key file to write")

    p = sub.add_parser("compile", help="apply graph passes and report depth")
    p.add_argument("graph", help="graph file or shipped graph name")
    p.add_argument("--passes", default="depth", help="comma-separated: " + ", ".join(x.value for x in PassId) + ", all")
    p.add_argument("--bypass-aware", action="store_true", help="count +-1/0 plaintext multiplies as free")
    p.add_argument("--sources", default="parameters", choices=("parameters", "constants", "all", "none"),
                   help="which sources are encrypted for depth purposes")
    p.add_argument("-o", "--out", help="write the rewritten graph here")
    p.add_argument("--report", help="write the depth report JSON here (default: stdout)")

    p = sub.add_parser("run", help="execute a graph under a paradigm")
    p.add_argument("graph", help="graph file or shipped graph name")
    p.add_argument("--keys", help="key file (its context overrides the context flags)")
    _add_context_flags(p)
    _add_bypass_flags(p)
    p.add_argument("--paradigm", default="encrypted-data", choices=[x.value for x in Paradigm])
    p.add_argument("--input", action="append", default=[], metavar="[NAME=]PATH",
                   help="tensor file for a parameter (repeatable)")
    p.add_argument("--batch", type=int, default=None, help="batch size for random inputs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("-o", "--out", help="output tensor file")
    p.add_argument("--profile", help="profile JSON file")

    p = sub.add_parser("bench", help="run a benchmark")
    bsub = p.add_subparsers(dest="bench", required=True, parser_class=_Parser)
    g = bsub.add_parser("gemm", help="encrypted A times plain B plus plain C")
    _add_context_flags(g)
    g.set_defaults(moduli_bits=[30, 30, 30])
    g.add_argument("--n", type=int, default=8)
    g.add_argument("--ones-frac", type=_float_list, default=[0.0, 0.5, 0.8])
    g.add_argument("--repeats", type=int, default=3)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--threads", type=int, default=1)
    g.add_argument("-o", "--out", help="bench JSON file")
    nb = bsub.add_parser("network", help="batch scaling of a graph")
    _add_context_flags(nb)
    _add_bypass_flags(nb)
    nb.add_argument("--graph", default="cryptonets")
    nb.add_argument("--batch-list", type=_int_list, default=[1, 64, 4096])
    nb.add_argument("--paradigm", default="encrypted-data", choices=[x.value for x in Paradigm])
    nb.add_argument("--seed", type=int, default=0)
    nb.add_argument("--threads", type=int, default=None)
    nb.add_argument("-o", "--out", help="bench JSON file")
    return ap


def resolve_graph(ref: str) -> Graph:
    """A path, or the name of a shipped graph (``cryptonets``, ``cifar.json``...)."""
    if os.path.exists(ref):
        return load(ref)
    name = Path(ref).name.removesuffix(".json")
    name = _ALIASES.get(name, name)
    if name in SHIPPED:
        return load_shipped(name)
    raise FileNotFoundError(f"no graph file {ref!r} and no shipped graph by that name")


def _context(args):
    return make_context(args.scheme, args.poly_degree, args.moduli_bits, args.scale_bits, args.security_lambda)


def _bypass(args) -> BypassConfig:
    return BypassConfig(not args.no_opt_mult, not args.no_opt_add, args.epsilon)


def cmd_keygen(args) -> int:
    ctx = _context(args)
    backend = make_backend(ctx, seed=args.seed)
    save_keys(backend.keys, args.out, include_secret=not args.public_only)
    print(ctx.summary())
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_compile(args) -> int:
    graph = resolve_graph(args.graph)
    passes = parse_passes(args.passes)
    graph, report = run_pipeline(graph, passes, args.bypass_aware, args.sources)
    if args.out:
        save(graph, args.out, indent=1)
    if report is None:
        print(f"applied {', '.join(p.value for p in passes) or 'no passes'}; {len(graph.nodes)} nodes")
        return EXIT_OK
    text = report.to_json(indent=2)
    if args.report:
        Path(args.report).write_text(text + "\n", encoding="utf-8")
        print(f"depth total={report.total} (critical path: {' -> '.join(report.critical_path)})")
    else:
        print(text)
    return EXIT_OK


def _inputs(args, graph: Graph) -> dict:
    params = graph.parameters()
    inputs = {}
    for item in args.input:
        name, sep, path = item.partition("=")
        if not sep:
            if len(params) != 1:
                raise UsageError("graph has several parameters; use --input NAME=PATH")
            name, path = params[0], item
        if name not in params:
            raise UsageError(f"graph has no parameter {name!r}")
        inputs[name] = load_tensor(path)
    missing = [p for p in params if p not in inputs and graph.nodes[p].data is None]
    if missing:
        batch = args.batch or 1
        shapes = infer_shapes(graph)
        rng = np.random.default_rng(args.seed)
        for pid in missing:
            s = shapes[pid]
            inputs[pid] = rng.uniform(0.0, 1.0, (batch,) + s.rest if s.batched else s.dims)
    return inputs


def cmd_run(args) -> int:
    graph = resolve_graph(args.graph)
    if args.keys:
        keys = load_keys(args.keys)
        ctx = keys.context
    else:
        keys, ctx = None, _context(args)
    inputs = _inputs(args, graph)
    outputs, profile = execute(
        graph, inputs, ctx, keys=keys, paradigm=args.paradigm, bypass=_bypass(args),
        threads=args.threads, seed=args.seed,
    )
    for oid, arr in outputs.items():
        if args.out:
            path = args.out if len(outputs) == 1 else f"{Path(args.out).with_suffix('')}.{oid}.json"
            save_tensor(arr, path)
        print(f"{oid}: shape={list(arr.shape)} level={profile.output_levels.get(oid)}")
    print(f"wall {profile.total_ms:.1f} ms; ct ops {profile.ct_ops}; bypassed {profile.bypass}")
    if args.profile:
        Path(args.profile).write_text(profile.to_json(indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_bench(args) -> int:
    ctx = _context(args)
    if args.bench == "gemm":
        records = B.bench_gemm(ctx, args.n, args.ones_frac, args.seed, args.repeats, args.threads)
    else:
        graph = resolve_graph(args.graph)
        records = B.bench_network(graph, ctx, args.batch_list, args.seed, args.paradigm, _bypass(args), args.threads)
    print(B.format_table(records))
    doc = json.dumps([r.to_dict() for r in records], indent=2)
    if args.out:
        Path(args.out).write_text(doc + "\n", encoding="utf-8")
    return EXIT_OK


COMMANDS = {"keygen": cmd_keygen, "compile": cmd_compile, "run": cmd_run, "bench": cmd_bench}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")

    def fail(code, msg):
        print(f"hegraph: error: {msg}", file=sys.stderr)
        return code

    try:
        return COMMANDS[args.command](args)
    except (DepthExceededError, LevelExhaustedError) as exc:
        return fail(EXIT_DEPTH, exc)
    except CapacityError as exc:
        return fail(EXIT_CAPACITY, exc)
    except (OSError, FormatError) as exc:
        return fail(EXIT_IO, exc)
    except (UsageError, ContextError, GraphError, ValueError) as exc:
        return fail(EXIT_USAGE, exc)


if __name__ == "__main__":
    sys.exit(main())
