"""FiBiNET network: embeddings, SENET gate, pairwise interactions, DNN, output.

Forward and backward are hand-derived; there is no autodiff. Every learnable
block lives in a flat dict of float64 arrays so the optimizer, the finite
difference checker, and the checkpoint writer can treat parameters uniformly.

Checkpoint layout (little-endian throughout):

    magic b"FIBN1"
    u32   header byte length
    header: UTF-8 JSON {"config": ..., "schema": ...}, sorted keys
    per array, in ascending name order:
        u16 name byte length | name UTF-8
        u8 ndim | ndim x u32 dims
        float64 data, C order

Round-trips are bit-exact.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import backend
from .data import ExampleBatch, FieldSchema
from .errors import BoundsError, CheckpointError, ConfigError, ShapeError, StateError
from .metrics import logloss
from .numeric import Rng, relu, sigmoid, sigmoid_raw, xavier_uniform

FIELD_TYPES = ("all", "each", "interaction")
COMBINATION_CODES = ("00", "01", "10", "11")
MODES = ("shallow", "deep")
ABLATIONS = ("none", "no_se", "no_bi", "fm", "fnn", "lr")

CHECKPOINT_MAGIC = b"FIBN1"


def pair_indices(f: int) -> tuple[np.ndarray, np.ndarray]:
    """Strict upper-triangle pairs (i, j), i < j, lexicographic."""
    left, right = np.triu_indices(f, k=1)
    return left.astype(np.int64), right.astype(np.int64)


def wsel_for(field_type: str, f: int) -> np.ndarray:
    """Which interaction matrix each pair reads: shared, per-left-field, or per-pair."""
    left, _ = pair_indices(f)
    n = left.shape[0]
    if field_type == "all":
        return np.zeros(n, dtype=np.int64)
    if field_type == "each":
        return left
    return np.arange(n, dtype=np.int64)


@dataclass(frozen=True)
class ModelConfig:
    f: int
    k: int
    field_type: str = "interaction"
    combination_code: str = "11"
    mode: str = "deep"
    hidden_units: tuple = (400, 400, 400)
    dropout_rate: float = 0.5
    reduction_ratio: int = 3
    ablation: str = "none"
    include_linear: bool = True
    share_bilinear: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden_units", tuple(int(u) for u in self.hidden_units))
        if self.f < 2:
            raise ConfigError(f"model.f: must be >= 2, got {self.f}")
        if self.k < 1:
            raise ConfigError(f"model.k: must be >= 1, got {self.k}")
        if self.field_type not in FIELD_TYPES:
            raise ConfigError(f"model.field_type: must be one of {FIELD_TYPES}, got {self.field_type!r}")
        if self.combination_code not in COMBINATION_CODES:
            raise ConfigError(
                f"model.combination_code: must be one of {COMBINATION_CODES}, got {self.combination_code!r}"
            )
        if self.mode not in MODES:
            raise ConfigError(f"model.mode: must be one of {MODES}, got {self.mode!r}")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"model.ablation: must be one of {ABLATIONS}, got {self.ablation!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"model.dropout_rate: must be in [0, 1), got {self.dropout_rate}")
        if self.reduction_ratio < 1:
            raise ConfigError(f"model.reduction_ratio: must be >= 1, got {self.reduction_ratio}")
        if any(u < 1 for u in self.hidden_units):
            raise ConfigError(f"model.hidden_units: every width must be >= 1, got {self.hidden_units}")
        if self.effective_mode == "deep" and not self.hidden_units:
            raise ConfigError("model.hidden_units: deep mode needs at least one hidden layer")
        if self.ablation == "lr" and not self.include_linear:
            raise ConfigError("model.ablation: lr requires include_linear")

    @property
    def n_pairs(self) -> int:
        return self.f * (self.f - 1) // 2

    @property
    def senet_hidden(self) -> int:
        return max(1, math.ceil(self.f / self.reduction_ratio))

    @property
    def depth(self) -> int:
        return len(self.hidden_units)

    # fm and lr are first-order-plus heads with no interaction vectors; fnn is
    # always deep over raw embeddings regardless of the configured mode.
    @property
    def effective_mode(self) -> str:
        if self.ablation in ("fm", "lr"):
            return "shallow"
        if self.ablation == "fnn":
            return "deep"
        return self.mode

    @property
    def effective_code(self) -> str:
        return "00" if self.ablation == "no_bi" else self.combination_code

    @property
    def uses_senet(self) -> bool:
        return self.ablation in ("none", "no_bi")

    @property
    def uses_interactions(self) -> bool:
        return self.ablation in ("none", "no_se", "no_bi")

    @property
    def uses_embedding(self) -> bool:
        return self.ablation != "lr"

    @property
    def uses_p_bilinear(self) -> bool:
        return self.uses_interactions and self.effective_code[0] == "1"

    @property
    def uses_q_bilinear(self) -> bool:
        return self.uses_interactions and self.uses_senet and self.effective_code[1] == "1"

    @property
    def n_interaction_mats(self) -> int:
        return {"all": 1, "each": self.f, "interaction": self.n_pairs}[self.field_type]

    @property
    def dnn_input_width(self) -> int:
        if self.ablation == "fnn":
            return self.f * self.k
        if self.ablation == "no_se":
            return self.n_pairs * self.k
        return 2 * self.n_pairs * self.k

    def to_dict(self) -> dict:
        return {
            "f": self.f,
            "k": self.k,
            "field_type": self.field_type,
            "combination_code": self.combination_code,
            "mode": self.mode,
            "hidden_units": list(self.hidden_units),
            "dropout_rate": self.dropout_rate,
            "reduction_ratio": self.reduction_ratio,
            "ablation": self.ablation,
            "include_linear": self.include_linear,
            "share_bilinear": self.share_bilinear,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        known = {
            "f", "k", "field_type", "combination_code", "mode", "hidden_units",
            "dropout_rate", "reduction_ratio", "ablation", "include_linear", "share_bilinear",
        }
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"model: unknown keys {sorted(unknown)}")
        if "f" not in d or "k" not in d:
            raise ConfigError("model: f and k are required")
        return ModelConfig(**d)


# ---------------------------------------------------------------------------
# stateless layer math, shared by the class and by oracle tests


def squeeze(e: np.ndarray) -> np.ndarray:
    """Per-field mean over the embedding dimension: (B, f, k) -> (B, f)."""
    return e.mean(axis=2)


def excitation(z: np.ndarray, w1: np.ndarray, w2: np.ndarray) -> np.ndarray:
    if z.shape[1] != w1.shape[0] or w1.shape[1] != w2.shape[0] or w2.shape[1] != z.shape[1]:
        raise ShapeError(f"excitation: Z {z.shape} vs W1 {w1.shape}, W2 {w2.shape}")
    return relu(relu(z @ w1) @ w2)


def reweight(a: np.ndarray, e: np.ndarray) -> np.ndarray:
    return a[:, :, None] * e


def bilinear_pair(v_i: np.ndarray, v_j: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Single pair: (v_i @ W) elementwise v_j."""
    if w.shape != (v_i.shape[0], v_j.shape[0]):
        raise ShapeError(f"bilinear_pair: W {w.shape} incompatible with vectors {v_i.shape}, {v_j.shape}")
    return (v_i @ w) * v_j


def combine(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Concatenate the two interaction paths along the pair axis."""
    if p.shape[0] != q.shape[0] or p.shape[2] != q.shape[2]:
        raise ShapeError(f"combine: p {p.shape} vs q {q.shape}")
    return np.concatenate([p, q], axis=1)


def shallow_head(c: np.ndarray) -> np.ndarray:
    """Sum of every element of the combined vector, per row."""
    return c.reshape(c.shape[0], -1).sum(axis=1)


def dnn_forward(x, params, config, training=False, dropout_rng=None):
    """Relu stack plus affine head; returns (y_d, cache for backward).

    Dropout hits hidden activations only, inverted scaling so eval needs no
    rescale. Cache holds pre-activations, post-dropout activations, masks.
    """
    rate = config.dropout_rate if training else 0.0
    if rate > 0.0 and dropout_rng is None:
        raise StateError("dnn_forward: training with dropout needs a dropout rng")
    acts = [x]
    pres = []
    masks = []
    a = x
    for layer in range(config.depth):
        w, b = params[f"dnn_w{layer}"], params[f"dnn_b{layer}"]
        if a.shape[1] != w.shape[0]:
            raise ShapeError(f"dnn layer {layer}: input {a.shape} vs weight {w.shape}")
        pre = a @ w + b
        h = relu(pre)
        if rate > 0.0:
            keep = dropout_rng.uniforms(h.size).reshape(h.shape) >= rate
            mask = keep / (1.0 - rate)
            h = h * mask
        else:
            mask = None
        pres.append(pre)
        masks.append(mask)
        acts.append(h)
        a = h
    y_d = a @ params["head_w"] + params["head_b"][0]
    return y_d, {"acts": acts, "pres": pres, "masks": masks}


def dnn_backward(d_y, params, config, cache):
    """Gradients of the relu stack; returns (d_input, grads for dnn blocks)."""
    grads = {}
    a_last = cache["acts"][-1]
    grads["head_w"] = a_last.T @ d_y
    grads["head_b"] = np.array([d_y.sum()])
    da = d_y[:, None] * params["head_w"][None, :]
    for layer in range(config.depth - 1, -1, -1):
        mask = cache["masks"][layer]
        if mask is not None:
            da = da * mask
        d_pre = da * (cache["pres"][layer] > 0.0)
        grads[f"dnn_w{layer}"] = cache["acts"][layer].T @ d_pre
        grads[f"dnn_b{layer}"] = d_pre.sum(axis=0)
        da = d_pre @ params[f"dnn_w{layer}"].T
    return da, grads


# ---------------------------------------------------------------------------
# parameters


def init_params(schema: FieldSchema, config: ModelConfig, rng: Rng) -> dict:
    """Build the active parameter set: blocks the configured variant never
    reads are simply absent, so the optimizer and gradient checker see only
    live arrays."""
    if schema.f != config.f:
        raise ConfigError(f"model.f: config says {config.f} fields but schema has {schema.f}")
    params: dict[str, np.ndarray] = {"w0": np.zeros(1)}
    if config.include_linear:
        params["linear_w"] = np.zeros(schema.total_buckets)
    if config.uses_embedding:
        params["embedding"] = rng.uniform(-0.01, 0.01, (schema.total_buckets, config.k))
    if config.uses_senet:
        params["senet_w1"] = xavier_uniform(rng, config.f, config.senet_hidden)
        params["senet_w2"] = xavier_uniform(rng, config.senet_hidden, config.f)

    def bilinear_block() -> np.ndarray:
        nw, k = config.n_interaction_mats, config.k
        bound = math.sqrt(6.0 / (k + k))
        mats = rng.uniform(-bound, bound, (nw, k, k))
        # per-path size must match the field-type formula exactly
        expect = {"all": k * k, "each": config.f * k * k, "interaction": config.n_pairs * k * k}
        assert mats.size == expect[config.field_type]
        return mats

    if config.share_bilinear:
        if config.uses_p_bilinear or config.uses_q_bilinear:
            params["bilinear_w"] = bilinear_block()
    else:
        if config.uses_p_bilinear:
            params["bilinear_p"] = bilinear_block()
        if config.uses_q_bilinear:
            params["bilinear_q"] = bilinear_block()

    if config.effective_mode == "deep":
        widths = [config.dnn_input_width] + list(config.hidden_units)
        for layer in range(config.depth):
            params[f"dnn_w{layer}"] = xavier_uniform(rng, widths[layer], widths[layer + 1])
            params[f"dnn_b{layer}"] = np.zeros(widths[layer + 1])
        params["head_w"] = xavier_uniform(rng, widths[-1], 1).reshape(widths[-1])
        params["head_b"] = np.zeros(1)
    return params


@dataclass
class ForwardTrace:
    """Activations one backward pass needs; discard after use."""

    flat_idx: np.ndarray
    values: np.ndarray
    logit: np.ndarray
    training: bool
    e: Optional[np.ndarray] = None
    sum_e: Optional[np.ndarray] = None  # fm path only
    z: Optional[np.ndarray] = None
    s1: Optional[np.ndarray] = None
    a1: Optional[np.ndarray] = None
    s2: Optional[np.ndarray] = None
    a_weights: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None
    p: Optional[np.ndarray] = None
    q: Optional[np.ndarray] = None
    lhs_p: Optional[np.ndarray] = None
    lhs_q: Optional[np.ndarray] = None
    dnn_cache: Optional[dict] = None


class FiBiNet:
    """One model instance: schema + config + parameter dict."""

    def __init__(self, schema: FieldSchema, config: ModelConfig, params: Optional[dict] = None,
                 init_rng: Optional[Rng] = None):
        if schema.f != config.f:
            raise ConfigError(f"model.f: config says {config.f} fields but schema has {schema.f}")
        self.schema = schema
        self.config = config
        self.field_offsets = schema.offsets()[:-1]
        self.field_sizes = np.array([fd.buckets for fd in schema.fields], dtype=np.int64)
        self.left, self.right = pair_indices(config.f)
        self.wsel = wsel_for(config.field_type, config.f)
        self.params = params if params is not None else init_params(schema, config, init_rng or Rng(0))

    # -- forward -----------------------------------------------------------

    def _flat_indices(self, batch: ExampleBatch) -> np.ndarray:
        idx = batch.indices
        if idx.shape[1] != self.config.f:
            raise ShapeError(f"batch has {idx.shape[1]} fields, model expects {self.config.f}")
        bad = (idx < 0) | (idx >= self.field_sizes[None, :])
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise BoundsError(
                f"field {self.schema.fields[c].name}: index {idx[r, c]} outside "
                f"[0, {self.field_sizes[c]}) at row {r}"
            )
        return idx + self.field_offsets[None, :]

    def _path_weights(self, path: str):
        if self.config.share_bilinear:
            return self.params["bilinear_w"]
        return self.params["bilinear_p" if path == "p" else "bilinear_q"]

    def forward(self, batch: ExampleBatch, training: bool = False,
                dropout_rng: Optional[Rng] = None) -> tuple[np.ndarray, ForwardTrace]:
        cfg = self.config
        flat = self._flat_indices(batch)
        logit = np.full(batch.size, self.params["w0"][0])
        if cfg.include_linear:
            logit = logit + backend.linear_terms(self.params["linear_w"], flat, batch.values)
        trace = ForwardTrace(flat_idx=flat, values=batch.values, logit=logit, training=training)
        if cfg.ablation == "lr":
            trace.logit = logit
            return logit, trace

        e = backend.gather_embeddings(self.params["embedding"], flat, batch.values)
        trace.e = e

        if cfg.ablation == "fm":
            sum_e = e.sum(axis=1)
            trace.sum_e = sum_e
            body = 0.5 * (sum_e * sum_e - (e * e).sum(axis=1)).sum(axis=1)
        elif cfg.ablation == "fnn":
            x = e.reshape(batch.size, cfg.f * cfg.k)
            body, trace.dnn_cache = dnn_forward(x, self.params, cfg, training, dropout_rng)
        else:
            if cfg.uses_senet:
                z = squeeze(e)
                s1 = z @ self.params["senet_w1"]
                a1 = relu(s1)
                s2 = a1 @ self.params["senet_w2"]
                a_w = relu(s2)
                v = reweight(a_w, e)
                trace.z, trace.s1, trace.a1, trace.s2, trace.a_weights, trace.v = z, s1, a1, s2, a_w, v

            if cfg.uses_p_bilinear:
                p, trace.lhs_p = backend.pair_bilinear(e, self.left, self.right, self._path_weights("p"), self.wsel)
            else:
                p = backend.pair_hadamard(e, self.left, self.right)
            trace.p = p

            if cfg.uses_senet:
                if cfg.uses_q_bilinear:
                    q, trace.lhs_q = backend.pair_bilinear(
                        trace.v, self.left, self.right, self._path_weights("q"), self.wsel
                    )
                else:
                    q = backend.pair_hadamard(trace.v, self.left, self.right)
                trace.q = q
                c = combine(p, q)
            else:
                c = p

            if cfg.effective_mode == "shallow":
                body = shallow_head(c)
            else:
                x = c.reshape(batch.size, cfg.dnn_input_width)
                body, trace.dnn_cache = dnn_forward(x, self.params, cfg, training, dropout_rng)

        logit = logit + body
        trace.logit = logit
        return logit, trace

    def predict(self, batch: ExampleBatch, training: bool = False,
                dropout_rng: Optional[Rng] = None) -> tuple[np.ndarray, ForwardTrace]:
        logit, trace = self.forward(batch, training, dropout_rng)
        return sigmoid(logit), trace

    # -- backward ----------------------------------------------------------

    def backward(self, trace: Optional[ForwardTrace], labels: np.ndarray) -> dict:
        """Mean cross-entropy gradients for every active parameter block.

        The chain starts from the raw (unclamped) sigmoid so a saturated
        prediction that matches its label contributes an exactly-zero pull.
        """
        if trace is None:
            raise StateError("backward: needs the trace from a matching forward pass")
        if labels.shape != trace.logit.shape:
            raise ShapeError(f"backward: labels {labels.shape} vs logits {trace.logit.shape}")
        cfg = self.config
        b = labels.shape[0]
        rows = self.schema.total_buckets
        d_logit = (sigmoid_raw(trace.logit) - labels) / b

        grads: dict[str, np.ndarray] = {"w0": np.array([d_logit.sum()])}
        if cfg.include_linear:
            grads["linear_w"] = backend.scatter_linear(trace.flat_idx, trace.values, d_logit, rows)
        if cfg.ablation == "lr":
            return grads

        if cfg.ablation == "fm":
            d_e = d_logit[:, None, None] * (trace.sum_e[:, None, :] - trace.e)
        elif cfg.ablation == "fnn":
            d_x, dnn_grads = dnn_backward(d_logit, self.params, cfg, trace.dnn_cache)
            grads.update(dnn_grads)
            d_e = d_x.reshape(trace.e.shape)
        else:
            if cfg.effective_mode == "shallow":
                width = cfg.dnn_input_width
                d_c = np.broadcast_to(d_logit[:, None], (b, width)).copy()
            else:
                d_c, dnn_grads = dnn_backward(d_logit, self.params, cfg, trace.dnn_cache)
                grads.update(dnn_grads)

            n, k = cfg.n_pairs, cfg.k
            if cfg.uses_senet:
                d_p = d_c[:, : n * k].reshape(b, n, k)
                d_q = d_c[:, n * k :].reshape(b, n, k)
            else:
                d_p = d_c.reshape(b, n, k)
                d_q = None

            if cfg.uses_p_bilinear:
                d_e, d_wp = backend.pair_bilinear_bwd(
                    trace.e, self.left, self.right, self._path_weights("p"), self.wsel, trace.lhs_p, d_p
                )
            else:
                d_e = backend.pair_hadamard_bwd(trace.e, self.left, self.right, d_p)
                d_wp = None

            if cfg.uses_senet:
                if cfg.uses_q_bilinear:
                    d_v, d_wq = backend.pair_bilinear_bwd(
                        trace.v, self.left, self.right, self._path_weights("q"), self.wsel, trace.lhs_q, d_q
                    )
                else:
                    d_v = backend.pair_hadamard_bwd(trace.v, self.left, self.right, d_q)
                    d_wq = None
                # reweight: v = a * e
                d_a = (d_v * trace.e).sum(axis=2)
                d_e = d_e + d_v * trace.a_weights[:, :, None]
                # excitation: A = relu(relu(Z W1) W2)
                d_s2 = d_a * (trace.s2 > 0.0)
                grads["senet_w2"] = trace.a1.T @ d_s2
                d_a1 = d_s2 @ self.params["senet_w2"].T
                d_s1 = d_a1 * (trace.s1 > 0.0)
                grads["senet_w1"] = trace.z.T @ d_s1
                d_z = d_s1 @ self.params["senet_w1"].T
                # squeeze: z = mean over k
                d_e = d_e + d_z[:, :, None] / cfg.k
            else:
                d_wq = None

            if cfg.share_bilinear:
                if d_wp is not None or d_wq is not None:
                    acc = np.zeros_like(self.params["bilinear_w"])
                    if d_wp is not None:
                        acc += d_wp
                    if d_wq is not None:
                        acc += d_wq
                    grads["bilinear_w"] = acc
            else:
                if d_wp is not None:
                    grads["bilinear_p"] = d_wp
                if d_wq is not None:
                    grads["bilinear_q"] = d_wq

        grads["embedding"] = backend.scatter_embeddings(trace.flat_idx, trace.values, d_e, rows)
        return grads

    def loss_and_grads(self, batch: ExampleBatch, training: bool = False,
                       dropout_rng: Optional[Rng] = None) -> tuple[float, dict]:
        logit, trace = self.forward(batch, training, dropout_rng)
        loss = logloss(sigmoid_raw(logit), batch.labels)
        return loss, self.backward(trace, batch.labels)

    # -- checkpointing -----------------------------------------------------

    def save(self, path):
        save_checkpoint(path, self.schema, self.config, self.params)

    @staticmethod
    def load(path) -> "FiBiNet":
        schema, config, params = load_checkpoint(path)
        return FiBiNet(schema, config, params)


def save_checkpoint(path, schema: FieldSchema, config: ModelConfig, params: dict):
    header = json.dumps(
        {"config": config.to_dict(), "schema": schema.to_dict()},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for name in sorted(params):
            arr = np.ascontiguousarray(params[name], dtype="<f8")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def load_checkpoint(path) -> tuple[FieldSchema, ModelConfig, dict]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a FIBN1 checkpoint")
    pos = len(CHECKPOINT_MAGIC)

    def need(count: int, what: str) -> int:
        if pos + count > len(blob):
            raise CheckpointError(f"{path}: truncated while reading {what}")
        return pos + count

    end = need(4, "header length")
    (hlen,) = struct.unpack("<I", blob[pos:end])
    pos = end
    end = need(hlen, "header")
    try:
        header = json.loads(blob[pos:end].decode("utf-8"))
        schema = FieldSchema.from_dict(header["schema"])
        config = ModelConfig.from_dict(header["config"])
    except (ValueError, KeyError) as exc:
        raise CheckpointError(f"{path}: unreadable header ({exc})") from exc
    pos = end

    params: dict[str, np.ndarray] = {}
    while pos < len(blob):
        end = need(2, "array name length")
        (nlen,) = struct.unpack("<H", blob[pos:end])
        pos = end
        end = need(nlen, "array name")
        name = blob[pos:end].decode("utf-8")
        pos = end
        end = need(1, f"{name}: ndim")
        ndim = blob[pos]
        pos = end
        end = need(4 * ndim, f"{name}: dims")
        shape = struct.unpack(f"<{ndim}I", blob[pos:end])
        pos = end
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        end = need(8 * count, f"{name}: data")
        params[name] = np.frombuffer(blob[pos:end], dtype="<f8").reshape(shape).copy()
        pos = end
    return schema, config, params
