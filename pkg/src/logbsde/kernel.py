"""Random sources: time grids, Brownian increments and Poisson counts on a finite mark space.

Randomness is drawn from counter-based Philox streams keyed by
``(seed, stream kind, path block)``. Path ``p`` always lives in block
``p // BLOCK_SIZE`` at offset ``p % BLOCK_SIZE`` and blocks are generated in
full, so the draws seen by a path depend only on the seed and the path index.
That makes generation order-independent (blocks can be produced by any number
of workers) and makes a bundle with more paths extend a smaller one.

Mark functions (the jump coefficient ``nu``) are plain arrays whose last axis
runs over the marks of a :class:`MarkMeasure`.
"""
from __future__ import annotations

import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError

BLOCK_SIZE = 1024

STREAM_BROWNIAN = 0
STREAM_JUMPS = 1
STREAM_TILT = 2

_MAGIC = b"LBSD"
_DUMP_VERSION = 1
_HEADER = struct.Struct("<4sIII")
_MASK64 = (1 << 64) - 1


def worker_count() -> int:
    """Worker-pool size, capped by the LOGBSDE_THREADS environment variable."""
    raw = os.environ.get("LOGBSDE_THREADS")
    if raw is None:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"expected a positive integer, got {raw!r}", field="LOGBSDE_THREADS")


@dataclass(frozen=True)
class MarkMeasure:
    """Finite discretization of the mark space: points ``w_k`` and rates ``lambda_k``."""

    marks: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        marks = np.asarray(self.marks, dtype=float)
        if marks.ndim == 1:
            marks = marks[:, None]
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if marks.ndim != 2 or marks.shape[0] != weights.shape[0]:
            raise ConfigError("marks and weights must have the same length", field="marks")
        if weights.size == 0:
            raise ConfigError("at least one mark is required", field="marks")
        if not np.all(np.isfinite(marks)) or not np.all(np.isfinite(weights)):
            raise ConfigError("marks and weights must be finite", field="marks")
        if np.any(weights <= 0):
            raise ConfigError("all rates must be strictly positive", field="weights")
        if np.any(np.all(marks == 0.0, axis=1)):
            raise ConfigError("the zero vector is not an admissible mark", field="marks")
        marks.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "marks", marks)
        object.__setattr__(self, "weights", weights)

    @property
    def n_marks(self) -> int:
        return self.weights.shape[0]

    @property
    def mark_dim(self) -> int:
        return self.marks.shape[1]

    @property
    def total_rate(self) -> float:
        return float(np.sum(self.weights))

    @property
    def mark_norms(self) -> np.ndarray:
        return np.linalg.norm(self.marks, axis=1)

    def small_jump_mass(self) -> float:
        """sum_k lambda_k * min(1, |w_k|^2); finite for every finite discretization."""
        return float(np.sum(self.weights * np.minimum(1.0, self.mark_norms**2)))


@dataclass(frozen=True)
class TimeGrid:
    times: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        if times.size < 2:
            raise ConfigError("a time grid needs at least one step", field="grid")
        if times[0] != 0.0:
            raise ConfigError("grid must start at t=0", field="grid")
        if not np.all(np.isfinite(times)) or np.any(np.diff(times) <= 0):
            raise ConfigError("grid times must be finite and strictly increasing", field="grid")
        times.setflags(write=False)
        object.__setattr__(self, "times", times)

    @classmethod
    def uniform(cls, T: float, n_steps: int) -> "TimeGrid":
        if n_steps < 1:
            raise ConfigError("n_steps must be >= 1", field="grid.n_steps")
        if not T > 0:
            raise ConfigError("horizon T must be positive", field="grid.T")
        times = np.linspace(0.0, T, n_steps + 1)
        times[-1] = T
        return cls(times)

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def n_steps(self) -> int:
        return self.times.shape[0] - 1

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def uniform_flag(self) -> bool:
        dt = self.dt
        return bool(np.allclose(dt, dt[0], rtol=1e-12, atol=0.0))


@dataclass(frozen=True, eq=False)
class PathBundle:
    """Per-path Brownian increments and per-(step, mark) jump counts.

    ``dW`` has shape ``(n_paths, n_steps, d)``; ``jump_counts`` has shape
    ``(n_paths, n_steps, K)`` with ``K = 0`` when no mark measure is attached.
    """

    grid: TimeGrid
    d: int
    n_paths: int
    dW: np.ndarray
    jump_counts: np.ndarray
    seed: int
    measure: Optional[MarkMeasure] = None
    stream_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.stream_ids is None:
            object.__setattr__(self, "stream_ids", np.arange(self.n_paths, dtype=np.int64) // BLOCK_SIZE)
        for arr in (self.dW, self.jump_counts, self.stream_ids):
            arr.setflags(write=False)

    @property
    def n_steps(self) -> int:
        return self.grid.n_steps

    @property
    def n_marks(self) -> int:
        return self.jump_counts.shape[2]

    def compensated_counts(self) -> np.ndarray:
        """counts - lambda_k * dt_i, shape (n_paths, n_steps, K)."""
        if self.measure is None:
            return np.zeros_like(self.jump_counts, dtype=float)
        comp = self.measure.weights[None, :] * self.grid.dt[:, None]
        return self.jump_counts - comp[None, :, :]

    def tilt_uniforms(self) -> np.ndarray:
        """Uniform variates from a third substream, used to re-weight jump intensities
        when simulating under a controlled measure. Shape (n_paths, n_steps, K)."""
        K = self.n_marks
        n = self.n_steps

        def draw(gen, size):
            return gen.random((size, n, K))

        return _blockwise(self.seed, STREAM_TILT, self.n_paths, draw)

    def same_noise(self, other: "PathBundle") -> bool:
        return (
            self.n_paths == other.n_paths
            and np.array_equal(self.grid.times, other.grid.times)
            and np.array_equal(self.dW, other.dW)
            and np.array_equal(self.jump_counts, other.jump_counts)
        )


def _stream(seed: int, kind: int, block: int) -> np.random.Generator:
    key = np.array([seed & _MASK64, (kind << 48) | block], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _blockwise(seed: int, kind: int, n_paths: int, draw: Callable, threads: Optional[int] = None) -> np.ndarray:
    n_blocks = -(-n_paths // BLOCK_SIZE)
    threads = worker_count() if threads is None else threads

    def one(b):
        return draw(_stream(seed, kind, b), BLOCK_SIZE)

    if threads > 1 and n_blocks > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            blocks = list(pool.map(one, range(n_blocks)))
    else:
        blocks = [one(b) for b in range(n_blocks)]
    return np.concatenate(blocks, axis=0)[:n_paths]


def _check_sizes(d, n_paths):
    if int(n_paths) < 1:
        raise ConfigError("n_paths must be >= 1", field="n_paths")
    if int(d) < 0:
        raise ConfigError("d must be >= 0", field="d")


def sample_brownian_increments(grid: TimeGrid, d: int, n_paths: int, seed: int) -> PathBundle:
    """Bundle carrying only the Brownian part: dW[p, i] ~ N(0, dt_i I_d)."""
    if grid is None:
        raise ConfigError("a time grid is required", field="grid")
    _check_sizes(d, n_paths)
    sq = np.sqrt(grid.dt)

    def draw(gen, size):
        return gen.standard_normal((size, grid.n_steps, d))

    dW = _blockwise(seed, STREAM_BROWNIAN, n_paths, draw) * sq[None, :, None]
    counts = np.zeros((n_paths, grid.n_steps, 0), dtype=np.int64)
    return PathBundle(grid, int(d), int(n_paths), dW, counts, int(seed))


def sample_poisson_marks(measure: MarkMeasure, grid: TimeGrid, n_paths: int, seed: int) -> PathBundle:
    """Bundle carrying only the jump part: counts[p, i, k] ~ Poisson(lambda_k dt_i)."""
    if not isinstance(measure, MarkMeasure):
        raise ConfigError("a MarkMeasure is required", field="marks")
    _check_sizes(0, n_paths)
    lam = grid.dt[:, None] * measure.weights[None, :]

    def draw(gen, size):
        return gen.poisson(lam, size=(size,) + lam.shape)

    counts = _blockwise(seed, STREAM_JUMPS, n_paths, draw).astype(np.int64)
    dW = np.zeros((n_paths, grid.n_steps, 0))
    return PathBundle(grid, 0, int(n_paths), dW, counts, int(seed), measure)


def sample_bundle(grid: TimeGrid, d: int, n_paths: int, seed: int, measure: Optional[MarkMeasure] = None) -> PathBundle:
    """Brownian and jump parts from independent substreams of one seed."""
    brownian = sample_brownian_increments(grid, d, n_paths, seed)
    if measure is None:
        return brownian
    jumps = sample_poisson_marks(measure, grid, n_paths, seed)
    return PathBundle(grid, brownian.d, brownian.n_paths, brownian.dW, jumps.jump_counts, int(seed), measure)


def compensated_increment(counts, values, measure: MarkMeasure, dt):
    """sum_k nu(w_k) * (counts_k - lambda_k dt); broadcasts over leading axes."""
    counts = np.asarray(counts, dtype=float)
    values = np.asarray(values, dtype=float)
    K = measure.n_marks
    if counts.shape[-1] != K or values.shape[-1] != K:
        raise ValueError(f"expected {K} marks, got counts {counts.shape} and values {values.shape}")
    return np.sum(values * (counts - measure.weights * dt), axis=-1)


def lnorm2(values, measure: MarkMeasure):
    """L^2_lambda norm of a mark function: sqrt(sum_k nu_k^2 lambda_k)."""
    values = np.asarray(values, dtype=float)
    if values.shape[-1] != measure.n_marks:
        raise ValueError(f"expected {measure.n_marks} marks, got {values.shape[-1]}")
    return np.sqrt(np.sum(values**2 * measure.weights, axis=-1))


# -- binary cache -------------------------------------------------------------
# Layout after the 16-byte header (all little-endian float64, row-major):
#   d, K, m, seed_hi32, seed_lo32, times[n+1], marks[K*m], weights[K],
#   dW[P*n*d], counts[P*n*K]


def dump_bundle(bundle: PathBundle, path) -> None:
    n, P, d, K = bundle.n_steps, bundle.n_paths, bundle.d, bundle.n_marks
    m = bundle.measure.mark_dim if bundle.measure is not None else 0
    seed = bundle.seed & _MASK64
    meta = np.array([d, K, m, seed >> 32, seed & 0xFFFFFFFF], dtype="<f8")
    parts = [meta, bundle.grid.times.astype("<f8")]
    if bundle.measure is not None:
        parts += [bundle.measure.marks.astype("<f8").ravel(), bundle.measure.weights.astype("<f8")]
    parts += [bundle.dW.astype("<f8").ravel(), bundle.jump_counts.astype("<f8").ravel()]
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _DUMP_VERSION, P, n))
        for part in parts:
            fh.write(np.ascontiguousarray(part, dtype="<f8").tobytes())


def load_bundle(path) -> PathBundle:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ConfigError("truncated bundle file", field=str(path))
    magic, version, P, n = _HEADER.unpack_from(raw)
    if magic != _MAGIC or version != _DUMP_VERSION:
        raise ConfigError(f"not a version-{_DUMP_VERSION} LBSD file", field=str(path))
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if data.size < 5:
        raise ConfigError("truncated bundle file", field=str(path))
    d, K, m = (int(v) for v in data[:3])
    if data.size != 5 + (n + 1) + K * m + K + P * n * d + P * n * K:
        raise ConfigError("bundle file size does not match its header", field=str(path))
    seed = (int(data[3]) << 32) | int(data[4])
    pos = 5

    def take(count):
        nonlocal pos
        out = data[pos:pos + count]
        pos += count
        return out

    times = take(n + 1)
    measure = None
    if K:
        marks = take(K * m).reshape(K, m)
        measure = MarkMeasure(marks, take(K))
    dW = take(P * n * d).reshape(P, n, d).copy()
    counts = take(P * n * K).reshape(P, n, K).astype(np.int64)
    if pos != data.size:
        raise ConfigError("bundle file size does not match its header", field=str(path))
    return PathBundle(TimeGrid(times), d, P, dW, counts, seed, measure)
