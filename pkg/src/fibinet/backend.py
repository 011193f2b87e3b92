"""Hot per-batch kernels: numba-jitted loops with a pure-numpy fallback.

The kernels here cover embedding gather/scatter and the per-pair interaction
forward/backward, the loops that dominate a training step. Dense matmuls
(SENET excitation, DNN layers) stay on numpy/BLAS in either mode.

Backend selection:
  * env var FIBINET_BACKEND = "numba" | "numpy" | "auto" (default "auto",
    which picks numba when importable), read once at import;
  * use("numba"|"numpy") switches at runtime, e.g. for the benchmark in
    benchmarks/bench_backends.py or for A/B tests.

Both implementations compute identical math with deterministic accumulation
order; they agree to ~1e-12 (BLAS-free loops vs vectorized reductions), and
each is bit-reproducible run to run.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dep, but stay importable
    HAVE_NUMBA = False


# ---------------------------------------------------------------------------
# numpy implementations


def _np_gather_embeddings(table, flat_idx, values):
    # E[b, i, :] = values[b, i] * table[flat_idx[b, i], :]
    return table[flat_idx] * values[:, :, None]


def _np_scatter_embeddings(flat_idx, values, d_emb, rows):
    k = d_emb.shape[2]
    d_table = np.zeros((rows, k))
    np.add.at(d_table, flat_idx.ravel(), (values[:, :, None] * d_emb).reshape(-1, k))
    return d_table


def _np_linear_terms(w, flat_idx, values):
    return (w[flat_idx] * values).sum(axis=1)


def _np_scatter_linear(flat_idx, values, d_logit, rows):
    dw = np.zeros(rows)
    np.add.at(dw, flat_idx.ravel(), (d_logit[:, None] * values).ravel())
    return dw


def _np_pair_hadamard(u, left, right):
    return u[:, left, :] * u[:, right, :]


def _np_pair_hadamard_bwd(u, left, right, d_p):
    du = np.zeros_like(u)
    np.add.at(du, (slice(None), left), d_p * u[:, right, :])
    np.add.at(du, (slice(None), right), d_p * u[:, left, :])
    return du


def _np_pair_bilinear(u, left, right, w, wsel):
    # lhs[b, m, :] = u[b, left[m], :] @ w[wsel[m]]; p = lhs * u[:, right, :]
    lhs = np.einsum("bms,mst->bmt", u[:, left, :], w[wsel])
    return lhs * u[:, right, :], lhs


def _np_pair_bilinear_bwd(u, left, right, w, wsel, lhs, d_p):
    du = np.zeros_like(u)
    dw = np.zeros_like(w)
    d_lhs = d_p * u[:, right, :]
    np.add.at(du, (slice(None), right), d_p * lhs)
    np.add.at(du, (slice(None), left), np.einsum("bmt,mst->bms", d_lhs, w[wsel]))
    np.add.at(dw, wsel, np.einsum("bms,bmt->mst", u[:, left, :], d_lhs))
    return du, dw


# ---------------------------------------------------------------------------
# numba implementations (same math, explicit loops)


def _nb_gather_embeddings(table, flat_idx, values):
    batch, f = flat_idx.shape
    k = table.shape[1]
    out = np.empty((batch, f, k))
    for b in range(batch):
        for i in range(f):
            r = flat_idx[b, i]
            x = values[b, i]
            for t in range(k):
                out[b, i, t] = x * table[r, t]
    return out


def _nb_scatter_embeddings(flat_idx, values, d_emb, rows):
    batch, f, k = d_emb.shape
    d_table = np.zeros((rows, k))
    for b in range(batch):
        for i in range(f):
            r = flat_idx[b, i]
            x = values[b, i]
            for t in range(k):
                d_table[r, t] += x * d_emb[b, i, t]
    return d_table


def _nb_linear_terms(w, flat_idx, values):
    batch, f = flat_idx.shape
    out = np.zeros(batch)
    for b in range(batch):
        acc = 0.0
        for i in range(f):
            acc += w[flat_idx[b, i]] * values[b, i]
        out[b] = acc
    return out


def _nb_scatter_linear(flat_idx, values, d_logit, rows):
    batch, f = flat_idx.shape
    dw = np.zeros(rows)
    for b in range(batch):
        g = d_logit[b]
        for i in range(f):
            dw[flat_idx[b, i]] += g * values[b, i]
    return dw


def _nb_pair_hadamard(u, left, right):
    batch, _, k = u.shape
    n = left.shape[0]
    p = np.empty((batch, n, k))
    for b in range(batch):
        for m in range(n):
            i = left[m]
            j = right[m]
            for t in range(k):
                p[b, m, t] = u[b, i, t] * u[b, j, t]
    return p


def _nb_pair_hadamard_bwd(u, left, right, d_p):
    batch, _, k = u.shape
    n = left.shape[0]
    du = np.zeros_like(u)
    for b in range(batch):
        for m in range(n):
            i = left[m]
            j = right[m]
            for t in range(k):
                du[b, i, t] += d_p[b, m, t] * u[b, j, t]
                du[b, j, t] += d_p[b, m, t] * u[b, i, t]
    return du


def _nb_pair_bilinear(u, left, right, w, wsel):
    batch, _, k = u.shape
    n = left.shape[0]
    p = np.empty((batch, n, k))
    lhs = np.empty((batch, n, k))
    for b in range(batch):
        for m in range(n):
            i = left[m]
            j = right[m]
            c = wsel[m]
            for t in range(k):
                acc = 0.0
                for s in range(k):
                    acc += u[b, i, s] * w[c, s, t]
                lhs[b, m, t] = acc
                p[b, m, t] = acc * u[b, j, t]
    return p, lhs


def _nb_pair_bilinear_bwd(u, left, right, w, wsel, lhs, d_p):
    batch, _, k = u.shape
    n = left.shape[0]
    du = np.zeros_like(u)
    dw = np.zeros_like(w)
    for b in range(batch):
        for m in range(n):
            i = left[m]
            j = right[m]
            c = wsel[m]
            for t in range(k):
                g = d_p[b, m, t]
                d_lhs = g * u[b, j, t]
                du[b, j, t] += g * lhs[b, m, t]
                for s in range(k):
                    du[b, i, s] += d_lhs * w[c, s, t]
                    dw[c, s, t] += u[b, i, s] * d_lhs
    return du, dw


_KERNEL_NAMES = (
    "gather_embeddings",
    "scatter_embeddings",
    "linear_terms",
    "scatter_linear",
    "pair_hadamard",
    "pair_hadamard_bwd",
    "pair_bilinear",
    "pair_bilinear_bwd",
)

_IMPLS = {
    "numpy": {
        "gather_embeddings": _np_gather_embeddings,
        "scatter_embeddings": _np_scatter_embeddings,
        "linear_terms": _np_linear_terms,
        "scatter_linear": _np_scatter_linear,
        "pair_hadamard": _np_pair_hadamard,
        "pair_hadamard_bwd": _np_pair_hadamard_bwd,
        "pair_bilinear": _np_pair_bilinear,
        "pair_bilinear_bwd": _np_pair_bilinear_bwd,
    }
}

if HAVE_NUMBA:
    _jit = njit(cache=True)
    _IMPLS["numba"] = {
        "gather_embeddings": _jit(_nb_gather_embeddings),
        "scatter_embeddings": _jit(_nb_scatter_embeddings),
        "linear_terms": _jit(_nb_linear_terms),
        "scatter_linear": _jit(_nb_scatter_linear),
        "pair_hadamard": _jit(_nb_pair_hadamard),
        "pair_hadamard_bwd": _jit(_nb_pair_hadamard_bwd),
        "pair_bilinear": _jit(_nb_pair_bilinear),
        "pair_bilinear_bwd": _jit(_nb_pair_bilinear_bwd),
    }


def available_backends():
    return tuple(sorted(_IMPLS))


def use(name: str) -> str:
    """Select the kernel implementation; returns the resolved backend name."""
    global _active, _active_name
    if name == "auto":
        name = "numba" if HAVE_NUMBA else "numpy"
    if name not in _IMPLS:
        raise ValueError(f"unknown backend {name!r}; available: {available_backends()}")
    _active = _IMPLS[name]
    _active_name = name
    return name


def backend_name() -> str:
    return _active_name


_active: dict = {}
_active_name = ""
use(os.environ.get("FIBINET_BACKEND", "auto"))


def gather_embeddings(table, flat_idx, values):
    return _active["gather_embeddings"](table, flat_idx, values)


def scatter_embeddings(flat_idx, values, d_emb, rows):
    return _active["scatter_embeddings"](flat_idx, values, d_emb, rows)


def linear_terms(w, flat_idx, values):
    return _active["linear_terms"](w, flat_idx, values)


def scatter_linear(flat_idx, values, d_logit, rows):
    return _active["scatter_linear"](flat_idx, values, d_logit, rows)


def pair_hadamard(u, left, right):
    return _active["pair_hadamard"](u, left, right)


def pair_hadamard_bwd(u, left, right, d_p):
    return _active["pair_hadamard_bwd"](u, left, right, d_p)


def pair_bilinear(u, left, right, w, wsel):
    return _active["pair_bilinear"](u, left, right, w, wsel)


def pair_bilinear_bwd(u, left, right, w, wsel, lhs, d_p):
    return _active["pair_bilinear_bwd"](u, left, right, w, wsel, lhs, d_p)
