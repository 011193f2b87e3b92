import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fibinet.data import ExampleBatch, Field, FieldSchema
from fibinet.numeric import Rng

# first calls pay numba compile latency; wall-clock deadlines are meaningless
settings.register_profile(
    "pkg",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("pkg")


def make_schema(f: int, buckets: int = 7) -> FieldSchema:
    return FieldSchema(tuple(Field(f"t{i}", "categorical", buckets) for i in range(f)))


def random_batch(schema: FieldSchema, rng: Rng, rows: int,
                 values: str = "ones") -> ExampleBatch:
    idx = np.empty((rows, schema.f), dtype=np.int64)
    for i, fd in enumerate(schema.fields):
        idx[:, i] = rng.integers(fd.buckets, rows)
    labels = (rng.uniforms(rows) < 0.5).astype(np.float64)
    if values == "ones":
        vals = np.ones((rows, schema.f))
    else:
        vals = rng.uniform(0.25, 2.0, (rows, schema.f))
    return ExampleBatch(labels, idx, vals)


@pytest.fixture
def rng():
    return Rng(12345)
