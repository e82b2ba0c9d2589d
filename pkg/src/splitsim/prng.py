"""Deterministic counter-based random streams and fixed-order vector ops.

Every random quantity in the simulator derives from a 64-bit root seed via
the splitmix64 finalizer, so any draw can be regenerated from
(root, stream tag, integer coordinates) alone. There is no global RNG state.

Normal variates come from a Box-Muller transform applied to 53-bit uniforms
read off the counter stream. This transform is part of the on-disk/replay
contract and must never change: stored round histories are replayed
bit-for-bit from seeds alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB

# Stream tags give domain separation between the independent random streams
# one run needs. Tag 1 is the broadcast perturbation stream.
STREAM_PERTURBATION = 1
STREAM_SAMPLING = 2
STREAM_BATCH = 3
STREAM_INIT = 4
STREAM_DATA = 5
STREAM_PARTITION = 6
STREAM_SPSA = 7
STREAM_PROBE = 8
STREAM_DIAG = 9


def mix64(x: int) -> int:
    """splitmix64 finalizer, the fixed 64-bit mixing hash."""
    x &= _MASK
    x = ((x ^ (x >> 30)) * _MIX_A) & _MASK
    x = ((x ^ (x >> 27)) * _MIX_B) & _MASK
    return x ^ (x >> 31)


def derive_stream(root: int, *parts: int) -> int:
    """Derive a child seed from a root seed and integer coordinates.

    Chained splitmix64 over the coordinate tuple; distinct tuples map to
    distinct seeds except with ~2**-64 probability.
    """
    h = mix64(root)
    for v in parts:
        h = mix64((h + _GOLDEN + (v & _MASK)) & _MASK)
    return h


@dataclass(frozen=True)
class SeedSpec:
    """Coordinates of one broadcast perturbation stream."""

    root_seed: int
    round: int
    perturbation_index: int

    def __post_init__(self):
        if not 0 <= self.root_seed <= _MASK:
            raise ValueError("root_seed must fit in 64 bits")
        if self.round < 0:
            raise ValueError("round must be non-negative")
        if self.perturbation_index < 1:
            raise ValueError("perturbation_index starts at 1")


def derive_seed(spec: SeedSpec) -> int:
    """Seed for perturbation p of round t under a given root. Pure."""
    return derive_stream(
        spec.root_seed, STREAM_PERTURBATION, spec.round, spec.perturbation_index
    )


# -----------------------------------------------------------------------------
# Counter stream -> uniforms -> Gaussians
# -----------------------------------------------------------------------------

def _finalize_u64(x: np.ndarray) -> np.ndarray:
    # Vectorized splitmix64 finalizer. uint64 arithmetic wraps mod 2**64.
    x = (x ^ (x >> np.uint64(30))) * np.uint64(_MIX_A)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(_MIX_B)
    return x ^ (x >> np.uint64(31))


def _uniform_block(seeds: np.ndarray, n: int) -> np.ndarray:
    """(len(seeds), n) uniforms in open (0, 1); entry j comes from counter j+1."""
    idx = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(_GOLDEN)
    state = seeds[:, None] + idx[None, :]
    bits = _finalize_u64(state) >> np.uint64(11)
    return (bits.astype(np.float64) + 0.5) * 2.0 ** -53


def gaussian_block(seeds, dim: int) -> np.ndarray:
    """Stack of standard-normal vectors, one row per seed.

    Row i is bit-identical to gaussian_vector(seeds[i], dim). Box-Muller on
    consecutive uniform pairs: counters (2k+1, 2k+2) produce draws (2k, 2k+1).
    """
    if dim < 0:
        raise ValueError("dim must be non-negative")
    seeds = np.asarray(seeds, dtype=np.uint64)
    if dim == 0:
        return np.empty((len(seeds), 0), dtype=np.float64)
    pairs = (dim + 1) // 2
    u = _uniform_block(seeds, 2 * pairs)
    r = np.sqrt(-2.0 * np.log(u[:, 0::2]))
    ang = (2.0 * np.pi) * u[:, 1::2]
    out = np.empty((len(seeds), 2 * pairs), dtype=np.float64)
    out[:, 0::2] = r * np.cos(ang)
    out[:, 1::2] = r * np.sin(ang)
    return out[:, :dim]


def gaussian_vector(seed: int, dim: int) -> np.ndarray:
    """dim i.i.d. N(0, 1) draws, bit-identical for identical (seed, dim)."""
    return gaussian_block([seed & _MASK], dim)[0]


def uniform_stream(seed: int, n: int) -> np.ndarray:
    """n uniforms in (0, 1) from the counter stream of one seed."""
    return _uniform_block(np.asarray([seed & _MASK], dtype=np.uint64), n)[0]


# -----------------------------------------------------------------------------
# Fixed-order vector arithmetic
# -----------------------------------------------------------------------------

def _check_pair(a: np.ndarray, b: np.ndarray, op: str):
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise DimensionMismatchError(
            f"{op}: shape mismatch {a.shape} vs {b.shape}"
        )


def dot(a, b) -> float:
    """Inner product with exact left-to-right IEEE-754 accumulation."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_pair(a, b, "dot")
    s = 0.0
    for x, y in zip(a.tolist(), b.tolist()):
        s += x * y
    return s


def axpy(alpha: float, x, y) -> np.ndarray:
    """alpha * x + y, elementwise, returning a new vector."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_pair(x, y, "axpy")
    return np.float64(alpha) * x + y


def ordered_mean(vectors) -> np.ndarray:
    """Mean of equal-length vectors, accumulated left-to-right then scaled once."""
    vectors = list(vectors)
    if not vectors:
        raise ValueError("ordered_mean of empty sequence")
    acc = np.zeros_like(np.asarray(vectors[0], dtype=np.float64))
    for v in vectors:
        acc = axpy(1.0, v, acc)
    return acc / np.float64(len(vectors))


def ordered_mean_scalar(values) -> float:
    """Mean of floats with left-to-right accumulation."""
    values = list(values)
    if not values:
        raise ValueError("ordered_mean_scalar of empty sequence")
    s = 0.0
    for v in values:
        s += float(v)
    return s / len(values)
