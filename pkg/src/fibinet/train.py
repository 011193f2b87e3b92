"""Adam optimizer, training loop with early stopping, gradient checks, ablations."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .data import ExampleBatch, FieldSchema, batches
from .errors import ConfigError, MetricUndefinedError, NumericError, ShapeError
from .metrics import auc, logloss
from .model import FiBiNet, ModelConfig
from .numeric import Rng, finite_diff_grad, rel_error, sigmoid_raw

ABLATION_VARIANTS = (
    ("BASE", "none"),
    ("NO-SE", "no_se"),
    ("NO-BI", "no_bi"),
    ("FM", "fm"),
    ("FNN", "fnn"),
)


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(params: dict, learning_rate: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    if learning_rate <= 0.0:
        raise ConfigError(f"train.learning_rate: must be > 0, got {learning_rate}")
    return AdamState(
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
        t=0,
        learning_rate=learning_rate,
        beta1=beta1, beta2=beta2, eps=eps,
    )


def adam_step(params: dict, grads: dict, state: AdamState) -> None:
    """Bias-corrected Adam update, in place."""
    if set(grads) != set(params):
        raise ShapeError(
            f"adam_step: gradient blocks {sorted(set(grads) ^ set(params))} do not match parameters"
        )
    state.t += 1
    correct1 = 1.0 - state.beta1 ** state.t
    correct2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"adam_step: {name} gradient {g.shape} vs parameter {p.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / correct1
        v_hat = v / correct2
        p -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 1000
    learning_rate: float = 0.0001
    eval_every: int = 1
    patience: int = 2
    seed: int = 0
    valid_fraction: float = 0.1  # used by callers that carve a valid set out of train
    # seconds column is 0.000 unless timing is opted in: reruns under one seed
    # must produce byte-identical logs
    log_timing: bool = False

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"train.epochs: must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"train.batch_size: must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0.0:
            raise ConfigError(f"train.learning_rate: must be > 0, got {self.learning_rate}")
        if self.eval_every < 1:
            raise ConfigError(f"train.eval_every: must be >= 1, got {self.eval_every}")
        if self.patience < 1:
            raise ConfigError(f"train.patience: must be >= 1, got {self.patience}")
        if not 0.0 < self.valid_fraction < 1.0:
            raise ConfigError(f"train.valid_fraction: must be in (0, 1), got {self.valid_fraction}")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "eval_every": self.eval_every,
            "patience": self.patience,
            "seed": self.seed,
            "valid_fraction": self.valid_fraction,
            "log_timing": self.log_timing,
        }

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        known = {
            "epochs", "batch_size", "learning_rate", "eval_every",
            "patience", "seed", "valid_fraction", "log_timing",
        }
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"train: unknown keys {sorted(unknown)}")
        return TrainConfig(**d)


def evaluate(model: FiBiNet, dataset: ExampleBatch, batch_size: int = 4096) -> tuple[float, float]:
    """(AUC, logloss) over a dataset with dropout off."""
    scores = np.empty(dataset.size)
    pos = 0
    for chunk in batches(dataset, batch_size):
        logit, _ = model.forward(chunk, training=False)
        scores[pos : pos + chunk.size] = sigmoid_raw(logit)
        pos += chunk.size
    return auc(scores, dataset.labels), logloss(scores, dataset.labels)


def _safe_auc(scores, labels) -> float:
    try:
        return auc(scores, labels)
    except MetricUndefinedError:
        return float("nan")


def train(schema: FieldSchema, model_config: ModelConfig, train_set: ExampleBatch,
          valid_set: ExampleBatch, cfg: TrainConfig) -> tuple[FiBiNet, list[tuple]]:
    """Run the epoch loop; returns (model holding best-valid-AUC params, log rows).

    Log rows are (epoch, split, auc, logloss, seconds). The train row reports
    metrics over the predictions gathered during the epoch (each score taken
    just before its batch's update); the valid row is a clean dropout-off pass.
    Deterministic for a fixed config and seed when log_timing is off.
    """
    rng = Rng(cfg.seed)
    model = FiBiNet(schema, model_config, init_rng=rng.child("init"))
    dropout_rng = rng.child("dropout")
    state = init_adam(model.params, cfg.learning_rate)

    best_params = {k: p.copy() for k, p in model.params.items()}
    best_auc = -np.inf
    evaluated = False
    stale = 0
    log: list[tuple] = []

    def clock(t0: float) -> float:
        return time.perf_counter() - t0 if cfg.log_timing else 0.0

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        shuffle_seed = rng.child(f"shuffle:{epoch}").next_u64()
        epoch_scores = np.empty(train_set.size)
        epoch_labels = np.empty(train_set.size)
        loss_sum = 0.0
        pos = 0
        for batch in batches(train_set, cfg.batch_size, shuffle_seed):
            logit, trace = model.forward(batch, training=True, dropout_rng=dropout_rng)
            loss = logloss(sigmoid_raw(logit), batch.labels)
            if not np.isfinite(loss):
                raise NumericError(f"training aborted: non-finite loss at step {state.t + 1}")
            grads = model.backward(trace, batch.labels)
            adam_step(model.params, grads, state)
            epoch_scores[pos : pos + batch.size] = sigmoid_raw(logit)
            epoch_labels[pos : pos + batch.size] = batch.labels
            loss_sum += loss * batch.size
            pos += batch.size
        log.append((
            epoch, "train",
            _safe_auc(epoch_scores, epoch_labels),
            loss_sum / max(1, train_set.size),
            clock(t0),
        ))

        if epoch % cfg.eval_every == 0:
            t0 = time.perf_counter()
            v_auc, v_loss = evaluate(model, valid_set, cfg.batch_size)
            log.append((epoch, "valid", v_auc, v_loss, clock(t0)))
            evaluated = True
            if v_auc > best_auc:
                best_auc = v_auc
                best_params = {k: p.copy() for k, p in model.params.items()}
                stale = 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break

    if not evaluated:
        best_params = model.params
    model.params = best_params
    return model, log


def write_log(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,split,auc,logloss,seconds\n")
        for epoch, split, auc_v, loss_v, secs in rows:
            fh.write(f"{epoch},{split},{auc_v:.6f},{loss_v:.6f},{secs:.3f}\n")


# ---------------------------------------------------------------------------
# gradient-check harness

# blocks that can exist under some configuration; absent ones are reported,
# not silently ignored
_KNOWN_BLOCKS = (
    "w0", "linear_w", "embedding", "senet_w1", "senet_w2",
    "bilinear_p", "bilinear_q", "bilinear_w",
)


def _tiny_batch(schema: FieldSchema, rng: Rng, rows: int) -> ExampleBatch:
    sizes = np.array([fd.buckets for fd in schema.fields], dtype=np.int64)
    idx = np.empty((rows, schema.f), dtype=np.int64)
    for i, size in enumerate(sizes):
        idx[:, i] = rng.integers(int(size), rows)
    labels = (rng.uniforms(rows) < 0.5).astype(np.float64)
    return ExampleBatch(labels, idx, np.ones((rows, schema.f)))


def _kink_margin(model: FiBiNet, batch: ExampleBatch) -> float:
    """Smallest |pre-activation| across every relu in the graph."""
    _, trace = model.forward(batch)
    margin = np.inf
    for tensor in (trace.s1, trace.s2):
        if tensor is not None:
            margin = min(margin, float(np.abs(tensor).min()))
    if trace.dnn_cache is not None:
        for pre in trace.dnn_cache["pres"]:
            margin = min(margin, float(np.abs(pre).min()))
    return margin


def grad_check(schema: FieldSchema, config: ModelConfig, seed: int = 0, rows: int = 3,
               h: float = 1e-5, tol: float = 1e-4) -> list[dict]:
    """Analytic vs central-difference gradients, one verdict per block.

    Dropout is off (training=False forward), so the loss is deterministic.
    Blocks the config never allocates are reported as skipped.

    Checks run at a generic O(1) random point, not the training init: with
    +-0.01 embeddings the relu pre-activations sit at the same scale as the
    finite-difference step, where central differences straddle kinks and say
    nothing about the backward pass. The same hazard exists at any point where
    some relu input is within the step's reach, so points are redrawn until
    every pre-activation clears h by a wide margin — the loss is then smooth
    on every probed interval and the comparison is meaningful.
    """
    rng = Rng(seed)
    model = FiBiNet(schema, config, init_rng=rng.child("init"))
    batch = _tiny_batch(schema, rng.child("data"), rows)
    for attempt in range(32):
        point_rng = rng.child(f"point:{attempt}")
        for name in sorted(model.params):
            model.params[name] = 0.5 * point_rng.normals(model.params[name].shape)
        if _kink_margin(model, batch) > 100.0 * h:
            break
    else:
        raise NumericError("grad_check: no well-conditioned evaluation point found")

    _, analytic = model.loss_and_grads(batch)

    report = []
    blocks = list(_KNOWN_BLOCKS) + sorted(k for k in model.params if k.startswith(("dnn_", "head_")))
    for name in blocks:
        if name not in model.params:
            report.append({"block": name, "status": "skipped", "rel_error": None})
            continue
        saved = model.params[name]

        def loss_of(theta, _name=name):
            model.params[_name] = theta
            value, _ = model.loss_and_grads(batch)
            return value

        fd = finite_diff_grad(loss_of, saved.copy(), h)
        model.params[name] = saved
        err = rel_error(analytic[name], fd)
        report.append({"block": name, "status": "pass" if err < tol else "fail", "rel_error": err})
    return report


# ---------------------------------------------------------------------------
# ablation runner


def run_ablation(schema: FieldSchema, base_config: ModelConfig, train_set: ExampleBatch,
                 valid_set: ExampleBatch, test_set: ExampleBatch,
                 cfg: TrainConfig) -> list[dict]:
    """Train BASE and the four removal variants under identical budgets.

    Returns one row per variant with test AUC and logloss. Zero-epoch budgets
    evaluate the untrained initializations (AUC about 0.5).
    """
    rows = []
    for label, ablation in ABLATION_VARIANTS:
        variant = replace(base_config, ablation=ablation)
        model, _ = train(schema, variant, train_set, valid_set, cfg)
        test_auc, test_loss = evaluate(model, test_set, cfg.batch_size)
        rows.append({"variant": label, "auc": test_auc, "logloss": test_loss})
    return rows


def write_ablation_csv(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("variant,auc,logloss\n")
        for row in rows:
            fh.write(f"{row['variant']},{row['auc']:.6f},{row['logloss']:.6f}\n")
