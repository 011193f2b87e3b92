"""Compare the numba-jitted kernels against the pure-numpy fallback.

Two views:
  * end-to-end: one training epoch on a synthetic dataset, per backend;
  * per-kernel: each hot kernel on realistic shapes, best of N repeats.

Run:  python3 benchmarks/bench_backends.py [--rows 20000] [--fields 10] [--k 8]
"""

import argparse
import time

import numpy as np

from fibinet import backend
from fibinet.data import SyntheticSpec, generate_synthetic, split_head_tail
from fibinet.model import FiBiNet, ModelConfig, pair_indices, wsel_for
from fibinet.numeric import Rng
from fibinet.train import TrainConfig, train


def bench_epoch(name: str, schema, model_config, train_set, valid_set, cfg) -> float:
    backend.use(name)
    # one throwaway mini-run pays numba's compile cost outside the timer
    warm = TrainConfig(**{**cfg.to_dict(), "epochs": 1})
    train(schema, model_config, train_set.slice(0, 2 * cfg.batch_size), valid_set, warm)
    t0 = time.perf_counter()
    train(schema, model_config, train_set, valid_set, cfg)
    return time.perf_counter() - t0


def kernel_workload(rows: int, f: int, k: int, buckets: int, batch: int):
    rng = Rng(1)
    left, right = pair_indices(f)
    n = left.shape[0]
    wsel = wsel_for("interaction", f)
    table = rng.normals((buckets, k))
    flat = np.empty((batch, f), dtype=np.int64)
    for i in range(f):
        flat[:, i] = rng.integers(buckets, batch)
    values = np.ones((batch, f))
    u = rng.normals((batch, f, k))
    w = rng.normals((n, k, k))
    d_p = rng.normals((batch, n, k))
    d_emb = rng.normals((batch, f, k))
    d_logit = rng.normals((batch,))
    lin_w = rng.normals((buckets,))
    _, lhs = backend.pair_bilinear(u, left, right, w, wsel)
    return {
        "gather_embeddings": lambda: backend.gather_embeddings(table, flat, values),
        "scatter_embeddings": lambda: backend.scatter_embeddings(flat, values, d_emb, buckets),
        "linear_terms": lambda: backend.linear_terms(lin_w, flat, values),
        "scatter_linear": lambda: backend.scatter_linear(flat, values, d_logit, buckets),
        "pair_hadamard": lambda: backend.pair_hadamard(u, left, right),
        "pair_hadamard_bwd": lambda: backend.pair_hadamard_bwd(u, left, right, d_p),
        "pair_bilinear": lambda: backend.pair_bilinear(u, left, right, w, wsel),
        "pair_bilinear_bwd": lambda: backend.pair_bilinear_bwd(u, left, right, w, wsel, lhs, d_p),
    }


def bench_kernels(name: str, rows, f, k, buckets, batch, iters, repeats) -> dict:
    backend.use(name)
    ops = kernel_workload(rows, f, k, buckets, batch)
    out = {}
    for op_name, op in ops.items():
        op()  # warm (numba compiles here)
        best = np.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            for _ in range(iters):
                op()
            best = min(best, (time.perf_counter() - t0) / iters)
        out[op_name] = best
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=20_000)
    ap.add_argument("--fields", type=int, default=10)
    ap.add_argument("--k", type=int, default=8)
    ap.add_argument("--batch-size", type=int, default=1000)
    ap.add_argument("--epochs", type=int, default=2)
    ap.add_argument("--kernel-iters", type=int, default=30)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    names = backend.available_backends()
    if len(names) < 2:
        print(f"only {names[0]} is available; nothing to compare")

    spec = SyntheticSpec(
        f=args.fields, k_true=4, n_rows=args.rows,
        pairs=((0, 1, 2.0), (1, 2, 2.0), (2, 3, 2.0)), seed=7,
    )
    train_full, _, _ = generate_synthetic(spec)
    train_set, valid_set = split_head_tail(train_full, 0.1)
    model_config = ModelConfig(f=args.fields, k=args.k, hidden_units=(64, 64),
                               dropout_rate=0.0)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                      learning_rate=0.001, seed=3)

    print(f"end-to-end: {args.epochs} epoch(s), {train_set.size} rows, "
          f"f={args.fields}, k={args.k}, batch={args.batch_size}")
    epoch_times = {}
    for name in names:
        epoch_times[name] = bench_epoch(name, spec.schema(), model_config,
                                        train_set, valid_set, cfg)
        print(f"  {name:<6} {epoch_times[name]:8.2f}s")
    if len(names) >= 2 and "numpy" in epoch_times and "numba" in epoch_times:
        print(f"  numba speedup: {epoch_times['numpy'] / epoch_times['numba']:.2f}x")

    print(f"\nper-kernel (best of {args.repeats}x{args.kernel_iters}, ms/call)")
    tables = {name: bench_kernels(name, args.rows, args.fields, args.k,
                                  50 * args.fields, args.batch_size,
                                  args.kernel_iters, args.repeats)
              for name in names}
    header = f"  {'kernel':<20}" + "".join(f"{name:>10}" for name in names)
    if len(names) >= 2:
        header += f"{'speedup':>10}"
    print(header)
    for op_name in next(iter(tables.values())):
        row = f"  {op_name:<20}"
        for name in names:
            row += f"{tables[name][op_name] * 1e3:>10.3f}"
        if len(names) >= 2 and "numpy" in tables and "numba" in tables:
            row += f"{tables['numpy'][op_name] / tables['numba'][op_name]:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
