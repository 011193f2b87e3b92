"""Click-log ingestion, hashed feature encoding, and synthetic interaction data.

TSV dialect: no header, one example per line, label column first (strictly
"0" or "1"), then one column per schema field. Categorical cells are hashed
as raw tokens. Continuous cells are discretized to a log-squared bucket
token first. The hash is FNV-1a 64 over the UTF-8 bytes of
"<field_index>:<token>", taken modulo the field's bucket count, so indices
are stable across runs, platforms, and reimplementations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ParseError, ShapeError
from .metrics import auc
from .numeric import Rng, sigmoid_raw

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

CATEGORICAL = "categorical"
CONTINUOUS = "continuous"


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & _MASK64
    return h


def hash_feature(field_index: int, token: str, bucket_count: int) -> int:
    """Deterministic bucket index for a (field, token) pair."""
    if bucket_count < 1:
        raise ConfigError(f"bucket_count: must be >= 1, got {bucket_count}")
    return fnv1a64(f"{field_index}:{token}".encode("utf-8")) % bucket_count


def discretize_continuous(x: float | None) -> str:
    """Token for a continuous value: floor(ln(x+1)^2) for x >= 0."""
    if x is None:
        return "missing"
    if x < 0:
        return "neg"
    return str(int(math.floor(math.log(x + 1.0) ** 2)))


@dataclass(frozen=True)
class Field:
    name: str
    kind: str
    buckets: int

    def __post_init__(self):
        if self.kind not in (CATEGORICAL, CONTINUOUS):
            raise ConfigError(f"field {self.name}: kind must be categorical or continuous, got {self.kind!r}")
        if self.buckets < 1:
            raise ConfigError(f"field {self.name}: buckets must be >= 1, got {self.buckets}")


@dataclass(frozen=True)
class FieldSchema:
    fields: tuple[Field, ...]

    def __post_init__(self):
        if len(self.fields) < 2:
            raise ConfigError(f"schema: needs at least 2 fields, got {len(self.fields)}")

    @property
    def f(self) -> int:
        return len(self.fields)

    @property
    def total_buckets(self) -> int:
        return sum(fd.buckets for fd in self.fields)

    def offsets(self) -> np.ndarray:
        """Start row of each field's bucket block in the flat embedding table."""
        sizes = [fd.buckets for fd in self.fields]
        return np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)

    def to_dict(self) -> dict:
        return {"fields": [{"name": fd.name, "kind": fd.kind, "buckets": fd.buckets} for fd in self.fields]}

    @staticmethod
    def from_dict(d: dict) -> "FieldSchema":
        try:
            fields = tuple(Field(e["name"], e["kind"], int(e["buckets"])) for e in d["fields"])
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"schema.fields: malformed entry ({exc})") from exc
        return FieldSchema(fields)


@dataclass
class Example:
    label: int
    indices: np.ndarray  # (f,) int64, one bucket per field
    values: np.ndarray  # (f,) float64, 1.0 for categorical


@dataclass
class ExampleBatch:
    """Columnar mini-batch (also used for whole desk-scale datasets)."""

    labels: np.ndarray  # (n,) float64 in {0, 1}
    indices: np.ndarray  # (n, f) int64
    values: np.ndarray  # (n, f) float64

    def __post_init__(self):
        n = self.labels.shape[0]
        if self.indices.shape[0] != n or self.values.shape[0] != n:
            raise ShapeError(
                f"batch columns disagree: labels {self.labels.shape}, "
                f"indices {self.indices.shape}, values {self.values.shape}"
            )

    @property
    def size(self) -> int:
        return self.labels.shape[0]

    def take(self, order: np.ndarray) -> "ExampleBatch":
        return ExampleBatch(self.labels[order], self.indices[order], self.values[order])

    def slice(self, start: int, stop: int) -> "ExampleBatch":
        return ExampleBatch(self.labels[start:stop], self.indices[start:stop], self.values[start:stop])


class TsvReader:
    """Streams Examples from a TSV file; counts and skips malformed rows.

    A row with the wrong number of columns is counted in .skipped and
    dropped. A row whose label is not "0"/"1" raises ParseError with the
    line number: that is a schema problem, not dirt.
    """

    def __init__(self, path, schema: FieldSchema, delimiter: str = "\t"):
        self.path = path
        self.schema = schema
        self.delimiter = delimiter
        self.skipped = 0
        self._hash_cache: dict[tuple[int, str], int] = {}

    def _index_for(self, field_index: int, token: str) -> int:
        key = (field_index, token)
        idx = self._hash_cache.get(key)
        if idx is None:
            idx = hash_feature(field_index, token, self.schema.fields[field_index].buckets)
            self._hash_cache[key] = idx
        return idx

    def __iter__(self):
        f = self.schema.f
        with open(self.path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                cells = line.rstrip("\n").rstrip("\r").split(self.delimiter)
                if len(cells) != f + 1:
                    self.skipped += 1
                    continue
                if cells[0] not in ("0", "1"):
                    raise ParseError(f"line {lineno}: label must be 0 or 1, got {cells[0]!r}")
                indices = np.empty(f, dtype=np.int64)
                for i, cell in enumerate(cells[1:]):
                    if self.schema.fields[i].kind == CONTINUOUS:
                        if cell == "":
                            token = "missing"
                        else:
                            try:
                                token = discretize_continuous(float(cell))
                            except ValueError:
                                token = "missing"
                    else:
                        token = cell
                    indices[i] = self._index_for(i, token)
                yield Example(int(cells[0]), indices, np.ones(f))


def load_tsv(path, schema: FieldSchema, delimiter: str = "\t") -> tuple[ExampleBatch, int]:
    """Materialize a TSV file; returns (batch, skipped_row_count)."""
    reader = TsvReader(path, schema, delimiter)
    labels, indices, values = [], [], []
    for ex in reader:
        labels.append(float(ex.label))
        indices.append(ex.indices)
        values.append(ex.values)
    f = schema.f
    batch = ExampleBatch(
        np.asarray(labels, dtype=np.float64),
        np.asarray(indices, dtype=np.int64).reshape(-1, f),
        np.asarray(values, dtype=np.float64).reshape(-1, f),
    )
    return batch, reader.skipped


def token_for_index(field_index: int, index: int, bucket_count: int) -> str:
    """A token that hashes back to exactly this bucket, so written files
    reload with the indices they were written from."""
    salt = 0
    while True:
        token = f"v{index}" if salt == 0 else f"v{index}~{salt}"
        if hash_feature(field_index, token, bucket_count) == index:
            return token
        salt += 1


def write_tsv(batch: ExampleBatch, schema: FieldSchema, path, delimiter: str = "\t"):
    """Write a batch in the package TSV dialect; reloading under the same
    schema reproduces the exact indices (tokens are chosen per field to hash
    back to their bucket)."""
    tokens: dict[tuple[int, int], str] = {}
    with open(path, "w", encoding="utf-8") as fh:
        for r in range(batch.size):
            cells = [str(int(batch.labels[r]))]
            for i, idx in enumerate(batch.indices[r]):
                key = (i, int(idx))
                tok = tokens.get(key)
                if tok is None:
                    tok = token_for_index(i, int(idx), schema.fields[i].buckets)
                    tokens[key] = tok
                cells.append(tok)
            fh.write(delimiter.join(cells) + "\n")


def split_train_test(batch: ExampleBatch, test_fraction: float, seed: int) -> tuple[ExampleBatch, ExampleBatch]:
    """Per-row independent Bernoulli(test_fraction) assignment under seed."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(f"test_fraction: must be in (0, 1), got {test_fraction}")
    u = Rng(seed).uniforms(batch.size)
    test_mask = u < test_fraction
    order = np.arange(batch.size)
    return batch.take(order[~test_mask]), batch.take(order[test_mask])


def split_head_tail(batch: ExampleBatch, test_fraction: float) -> tuple[ExampleBatch, ExampleBatch]:
    """Chronological split: leading rows train, trailing rows test."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(f"test_fraction: must be in (0, 1), got {test_fraction}")
    n_test = int(round(batch.size * test_fraction))
    cut = batch.size - n_test
    return batch.slice(0, cut), batch.slice(cut, batch.size)


def batches(batch: ExampleBatch, batch_size: int, shuffle_seed: int | None = None):
    """Yield mini-batches; deterministic shuffle under seed; last may be short."""
    if batch_size < 1:
        raise ConfigError(f"batch_size: must be >= 1, got {batch_size}")
    src = batch if shuffle_seed is None else batch.take(Rng(shuffle_seed).shuffled_order(batch.size))
    for start in range(0, src.size, batch_size):
        yield src.slice(start, min(start + batch_size, src.size))


# ---------------------------------------------------------------------------
# synthetic data with planted pairwise interactions


@dataclass
class SyntheticSpec:
    """Generator recipe: labels driven purely by planted field-pair interactions.

    Latent vectors are centered within each field, so no single field carries
    marginal signal; a first-order model can do no better than chance.
    """

    f: int
    k_true: int
    n_rows: int
    pairs: tuple[tuple[int, int, float], ...]  # (field_i, field_j, weight)
    noise_rate: float = 0.0
    seed: int = 0
    vocab: int = 20
    bias: float = 0.0
    test_fraction: float = 1.0 / 6.0
    # "random" routes each pair through its own dense mixing matrix, so a
    # model needs more than elementwise products when pairs share a field;
    # "identity" plants plain inner products
    pair_mixing: str = "random"

    def __post_init__(self):
        self.pairs = tuple((int(i), int(j), float(w)) for i, j, w in self.pairs)
        if self.f < 2:
            raise ConfigError(f"synth.f: must be >= 2, got {self.f}")
        if self.pair_mixing not in ("identity", "random"):
            raise ConfigError(f"synth.pair_mixing: must be identity or random, got {self.pair_mixing!r}")
        if self.k_true < 1:
            raise ConfigError(f"synth.k_true: must be >= 1, got {self.k_true}")
        if self.n_rows < 2:
            raise ConfigError(f"synth.n_rows: must be >= 2, got {self.n_rows}")
        if self.vocab < 2:
            raise ConfigError(f"synth.vocab: must be >= 2, got {self.vocab}")
        if not 0.0 <= self.noise_rate < 0.5:
            raise ConfigError(f"synth.noise_rate: must be in [0, 0.5), got {self.noise_rate}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError(f"synth.test_fraction: must be in (0, 1), got {self.test_fraction}")
        for i, j, _ in self.pairs:
            if i == j or not (0 <= i < self.f and 0 <= j < self.f):
                raise ConfigError(f"synth.pairs: ({i}, {j}) is not a distinct in-range field pair")

    def schema(self) -> FieldSchema:
        return FieldSchema(tuple(Field(f"s{i}", CATEGORICAL, self.vocab) for i in range(self.f)))

    def to_dict(self) -> dict:
        return {
            "f": self.f,
            "k_true": self.k_true,
            "n_rows": self.n_rows,
            "pairs": [list(p) for p in self.pairs],
            "noise_rate": self.noise_rate,
            "seed": self.seed,
            "vocab": self.vocab,
            "bias": self.bias,
            "test_fraction": self.test_fraction,
            "pair_mixing": self.pair_mixing,
        }

    @staticmethod
    def from_dict(d: dict) -> "SyntheticSpec":
        try:
            return SyntheticSpec(
                f=int(d["f"]),
                k_true=int(d["k_true"]),
                n_rows=int(d["n_rows"]),
                pairs=tuple(tuple(p) for p in d["pairs"]),
                noise_rate=float(d.get("noise_rate", 0.0)),
                seed=int(d.get("seed", 0)),
                vocab=int(d.get("vocab", 20)),
                bias=float(d.get("bias", 0.0)),
                test_fraction=float(d.get("test_fraction", 1.0 / 6.0)),
                pair_mixing=str(d.get("pair_mixing", "random")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"synth: malformed spec ({exc})") from exc


def generate_synthetic(spec: SyntheticSpec) -> tuple[ExampleBatch, ExampleBatch, float]:
    """Draw a planted-interaction dataset.

    Returns (train, test, bayes_auc) where bayes_auc is the AUC of the true
    logit against the realized labels on the test rows: the ceiling any
    model can reach on this data.
    """
    rng = Rng(spec.seed)
    lat_rng = rng.child("latents")
    mix_rng = rng.child("mixing")
    row_rng = rng.child("rows")
    label_rng = rng.child("labels")
    noise_rng = rng.child("noise")

    latents = np.empty((spec.f, spec.vocab, spec.k_true))
    for i in range(spec.f):
        u = lat_rng.normals((spec.vocab, spec.k_true)) / math.sqrt(spec.k_true)
        latents[i] = u - u.mean(axis=0, keepdims=True)

    idx = row_rng.integers(spec.vocab, spec.n_rows * spec.f).reshape(spec.n_rows, spec.f)
    logit = np.full(spec.n_rows, spec.bias)
    for i, j, w in spec.pairs:
        if spec.pair_mixing == "random":
            mix = mix_rng.normals((spec.k_true, spec.k_true)) / math.sqrt(spec.k_true)
        else:
            mix = np.eye(spec.k_true)
        logit += w * np.einsum("rs,st,rt->r", latents[i][idx[:, i]], mix, latents[j][idx[:, j]])

    labels = (label_rng.uniforms(spec.n_rows) < sigmoid_raw(logit)).astype(np.float64)
    if spec.noise_rate > 0.0:
        flip = noise_rng.uniforms(spec.n_rows) < spec.noise_rate
        labels = np.where(flip, 1.0 - labels, labels)

    batch = ExampleBatch(labels, idx, np.ones((spec.n_rows, spec.f)))
    train, test = split_head_tail(batch, spec.test_fraction)
    bayes_auc = auc(logit[train.size :], test.labels)
    return train, test, bayes_auc


# ---------------------------------------------------------------------------
# demo click-log generator (Criteo-style column layout)

N_DEMO_CONTINUOUS = 13
N_DEMO_CATEGORICAL = 26


def demo_schema(cont_buckets: int = 50, cat_buckets: int = 200) -> FieldSchema:
    """Schema matching the demo log layout: 13 continuous + 26 categorical."""
    fields = [Field(f"i{n + 1}", CONTINUOUS, cont_buckets) for n in range(N_DEMO_CONTINUOUS)]
    fields += [Field(f"c{n + 1}", CATEGORICAL, cat_buckets) for n in range(N_DEMO_CATEGORICAL)]
    return FieldSchema(tuple(fields))


def make_demo_lines(n_rows: int, seed: int = 0) -> list[str]:
    """Deterministic Criteo-style TSV lines: dirty-ish values, mild label signal."""
    rng = Rng(seed)
    lines = []
    for _ in range(n_rows):
        u = rng.uniforms(N_DEMO_CONTINUOUS + N_DEMO_CATEGORICAL + 2)
        cells = []
        for c in range(N_DEMO_CONTINUOUS):
            if u[c] < 0.15:
                cells.append("")  # missing, as in raw logs
            else:
                cells.append(str(int(u[c] ** 3 * 5000)))
        cat_ids = []
        for c in range(N_DEMO_CATEGORICAL):
            vocab = 10 + 7 * c
            tok_id = int(u[N_DEMO_CONTINUOUS + c] * vocab)
            cat_ids.append(tok_id)
            cells.append(f"{fnv1a64(f'{c}:{tok_id}'.encode()):016x}" if u[-1] > 0.02 else "")
        p_click = 0.15 + 0.4 * ((cat_ids[0] + cat_ids[3]) % 2)
        label = "1" if u[-2] < p_click else "0"
        lines.append("\t".join([label] + cells))
    return lines
