"""Benchmarks: encrypted GEMM with plaintext-ones sparsity, and batch scaling of a network."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .backends import make_backend
from .graph import Graph, Node, infer_shapes
from .he.context import CryptoContext
from .runtime.bypass import BypassConfig
from .runtime.executor import Paradigm, execute


def gemm_graph(b: np.ndarray, c: np.ndarray) -> Graph:
    """``A @ B + C`` with ``A`` an unbatched input and ``B``, ``C`` constants."""
    n = b.shape[0]
    nodes = [
        Node("A", "Parameter", (), {"shape": [n, b.shape[0]], "batched": False}),
        Node("B", "Constant", (), {}, b),
        Node("C", "Constant", (), {}, c),
        Node("AB", "Dot", ("A", "B")),
        Node("out", "Add", ("AB", "C")),
    ]
    return Graph("gemm", nodes, ["out"])


def gemm_operands(n: int, ones_frac: float, seed=0):
    """Seeded ``A``, ``B``, ``C`` and the mask of entries of ``B`` set to exactly 1."""
    rng = np.random.default_rng(seed)
    a = rng.uniform(-1.0, 1.0, (n, n))
    b = rng.uniform(-0.5, 0.5, (n, n))
    c = rng.uniform(-0.5, 0.5, (n, n))
    mask = rng.random((n, n)) < ones_frac
    b[mask] = 1.0
    return a, b, c, mask


@dataclass
class BenchRecord:
    bench: str
    params: dict
    wall_ms: float
    bypass: dict
    amortized_ms: float | None = None

    def to_dict(self) -> dict:
        d = {"bench": self.bench, "params": self.params, "wall_ms": self.wall_ms, "bypass": self.bypass}
        if self.amortized_ms is not None:
            d["amortized_ms"] = self.amortized_ms
        return d


def bench_gemm(context: CryptoContext, n=8, ones_fracs=(0.0, 0.5, 0.8), seed=0, repeats=3, threads=1):
    """Time ``AB + C`` with ``A`` encrypted per scalar and optimized multiply on.

    Every scalar product goes through the element-wise kernel, so each
    bypassed ``x * 1`` saves a real ciphertext-plaintext multiply. The
    reported time is the best of ``repeats`` runs.
    """
    backend = make_backend(context, seed=seed)
    records = []
    for frac in ones_fracs:
        a, b, c, mask = gemm_operands(n, frac, seed)
        g = gemm_graph(b, c)
        best, prof = None, None
        for _ in range(repeats):
            t0 = time.perf_counter()
            out, prof = execute(
                g, {"A": a}, context, paradigm=Paradigm.EncryptedData, bypass=BypassConfig(True, True),
                backend=backend, threads=threads, use_overrides=False,
            )
            ms = (time.perf_counter() - t0) * 1e3
            best = ms if best is None else min(best, ms)
        err = float(np.max(np.abs(out["out"] - (a @ b + c))))
        records.append(BenchRecord(
            "gemm",
            {"n": n, "ones_frac": frac, "ones": int(mask.sum()), "expected_bypass_mult": int(n * mask.sum()),
             "scalar_mults": n ** 3, "max_abs_error": err, "ct_ops": prof.ct_ops},
            best,
            dict(prof.bypass),
        ))
    return records


def bench_network(graph: Graph, context: CryptoContext, batches=(1, 64, 4096), seed=0, paradigm="encrypted-data",
                  bypass=None, threads=None):
    """Total and per-image time of one encrypted pass for each batch size."""
    backend = make_backend(context, seed=seed)
    shapes = infer_shapes(graph)
    rng = np.random.default_rng(seed)
    records = []
    for batch in batches:
        inputs = {}
        for pid in graph.parameters():
            s = shapes[pid]
            dims = (batch,) + s.rest if s.batched else s.dims
            inputs[pid] = rng.uniform(0.0, 1.0, dims)
        t0 = time.perf_counter()
        _, prof = execute(graph, inputs, context, paradigm=paradigm, bypass=bypass, backend=backend, threads=threads)
        ms = (time.perf_counter() - t0) * 1e3
        records.append(BenchRecord(
            "network",
            {"graph": graph.name, "batch": batch, "paradigm": Paradigm.parse(paradigm).value, "ct_ops": prof.ct_ops,
             "compute_ms": prof.total_ms},
            ms,
            dict(prof.bypass),
            ms / batch,
        ))
    return records


def format_table(records) -> str:
    lines = []
    for r in records:
        keys = ("ones_frac", "batch", "n", "graph")
        desc = " ".join(f"{k}={r.params[k]}" for k in keys if k in r.params)
        line = f"{r.bench:8s} {desc:32s} wall={r.wall_ms:10.1f} ms"
        if r.amortized_ms is not None:
            line += f"  amortized={r.amortized_ms:10.3f} ms"
        line += f"  bypass mult={r.bypass['mult']} add={r.bypass['add']}"
        lines.append(line)
    return "\n".join(lines)
