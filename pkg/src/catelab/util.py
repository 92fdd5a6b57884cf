"""Shared numeric helpers: seeded RNG streams, normal distribution, formatting.

All randomness in the package flows through :func:`rng_stream` so that a
single master seed reproduces every draw bit-for-bit. The generator is
numpy's PCG64; stream keys separate independent consumers (trees,
bootstrap replicates, folds, ...) without any shared state.
"""

from __future__ import annotations

import hashlib
import json
import math
from statistics import NormalDist

import numpy as np

_STANDARD_NORMAL = NormalDist()


def rng_stream(seed: int, *key: int) -> np.random.Generator:
    """Return a PCG64 generator for the (seed, *key) stream.

    Distinct keys give statistically independent streams; the same
    (seed, key) pair always gives the same stream.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed: int, *key: int) -> int:
    """Fold (seed, *key) into a single 63-bit integer seed."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def norm_ppf(q: float) -> float:
    """Standard normal quantile (inverse CDF)."""
    return _STANDARD_NORMAL.inv_cdf(float(q))


def norm_cdf(x):
    """Standard normal CDF, elementwise on arrays."""
    arr = np.asarray(x, dtype=float)
    out = np.array([0.5 * (1.0 + math.erf(v / math.sqrt(2.0))) for v in arr.ravel()])
    return out.reshape(arr.shape) if arr.shape else float(out[0])


def fmt_float(v: float) -> str:
    """Format a float with 17 significant digits (exact round-trip)."""
    return format(float(v), ".17g")


def fingerprint(config: dict) -> str:
    """Short stable hash of a JSON-serializable configuration."""
    payload = json.dumps(config, sort_keys=True, default=str)
    return hashlib.sha256(payload.encode()).hexdigest()[:12]
