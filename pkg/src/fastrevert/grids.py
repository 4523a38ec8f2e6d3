"""Time grids and counter-based noise streams.

Every random draw in the package goes through :class:`NoiseSource`. A stream
is keyed by ``(master seed, channel label, path index)`` and backed by the
Philox counter-based generator, so the increment consumed at a given step of
a given path does not depend on how many paths are simulated, how draws are
chunked, or which worker produced them.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

__all__ = ["TimeGrid", "NoiseSource", "channel_key"]


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing simulation nodes starting at 0.

    Parameters
    ----------
    nodes : array_like
        Grid nodes. ``nodes[0]`` must be 0 and the sequence strictly
        increasing; the last node is the horizon.
    policy : str
        Label of the construction rule (``"uniform"``, ``"geometric"`` or
        ``"custom"``), kept for reports.
    """

    nodes: np.ndarray
    policy: str = "custom"

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("a grid needs at least two nodes")
        if nodes[0] != 0.0:
            raise ValueError("grid must start at 0")
        if not np.all(np.diff(nodes) > 0) or not np.all(np.isfinite(nodes)):
            raise ValueError("grid nodes must be finite and strictly increasing")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def uniform(cls, horizon: float, n_steps: int | None = None,
                dt: float | None = None) -> "TimeGrid":
        """Uniform grid on ``[0, horizon]`` given either ``n_steps`` or ``dt``.

        With ``dt`` the step count is ``round(horizon / dt)`` and must
        reproduce the horizon to 1e-9 relative; nodes are ``i * dt`` so that
        index arithmetic on windows of length ``k * dt`` is exact.
        """
        if horizon <= 0:
            raise ValueError("horizon must be positive")
        if (n_steps is None) == (dt is None):
            raise ValueError("give exactly one of n_steps, dt")
        if dt is not None:
            if dt <= 0:
                raise ValueError("dt must be positive")
            n_steps = int(round(horizon / dt))
            if n_steps < 1 or abs(n_steps * dt - horizon) > 1e-9 * horizon:
                raise ValueError(f"horizon {horizon} is not a multiple of dt {dt}")
        if n_steps < 1:
            raise ValueError("n_steps must be at least 1")
        step = horizon / n_steps if dt is None else dt
        nodes = np.arange(n_steps + 1) * step
        nodes[-1] = horizon
        return cls(nodes, "uniform")

    @classmethod
    def geometric(cls, horizon: float, n_steps: int, first_step: float) -> "TimeGrid":
        """Grid whose steps grow geometrically from ``first_step``.

        The ratio is found by root finding so that the steps sum to the
        horizon; useful to resolve the initial transient of stiff paths.
        """
        from scipy.optimize import brentq

        if not 0 < first_step * n_steps < horizon:
            if abs(first_step * n_steps - horizon) <= 1e-12 * horizon:
                return cls.uniform(horizon, n_steps)
            raise ValueError("first_step * n_steps must be below the horizon")

        def excess(r):
            return first_step * np.expm1(n_steps * np.log(r)) / (r - 1.0) - horizon

        ratio = brentq(excess, 1.0 + 1e-12, 2.0 ** (60.0 / n_steps) + 1.0, xtol=1e-15)
        steps = first_step * ratio ** np.arange(n_steps)
        nodes = np.concatenate([[0.0], np.cumsum(steps)])
        nodes[-1] = horizon
        return cls(nodes, "geometric")

    @property
    def horizon(self) -> float:
        return float(self.nodes[-1])

    @property
    def dt(self) -> np.ndarray:
        """Step sizes, one per step."""
        return np.diff(self.nodes)

    @property
    def n_steps(self) -> int:
        return self.nodes.size - 1

    def is_uniform(self, rtol: float = 1e-9) -> bool:
        d = self.dt
        return bool(np.all(np.abs(d - d[0]) <= rtol * d[0]))

    def index_of(self, t: float, rtol: float = 1e-9) -> int:
        """Index of the node equal to ``t`` (uniform grids); raises if off-grid."""
        if not self.is_uniform():
            i = int(np.searchsorted(self.nodes, t))
            if i < self.nodes.size and abs(self.nodes[i] - t) <= rtol * max(1.0, abs(t)):
                return i
            raise ValueError(f"time {t} is not a grid node")
        step = self.dt[0]
        i = int(round(t / step))
        if i < 0 or i > self.n_steps or abs(i * step - t) > rtol * max(step, abs(t)):
            raise ValueError(f"time {t} is not a grid node")
        return i

    def same_as(self, other: "TimeGrid") -> bool:
        return self is other or (self.nodes.shape == other.nodes.shape
                                 and np.array_equal(self.nodes, other.nodes))


def channel_key(label: str) -> int:
    """Stable 32-bit key for a channel label."""
    return zlib.crc32(label.encode("utf-8"))


class NoiseSource:
    """Seeded factory of independent Gaussian streams.

    Parameters
    ----------
    seed : int
        Master seed, ``0 <= seed < 2**64``.

    Notes
    -----
    Stream ``(channel, path)`` is a Philox generator with key
    ``[seed, channel_key(channel) << 32 | path]``. Paths are limited to
    ``2**32`` per channel.
    """

    def __init__(self, seed: int):
        seed = int(seed)
        if not 0 <= seed < 2 ** 64:
            raise ValueError("seed must lie in [0, 2**64)")
        self.seed = seed

    def __repr__(self):
        return f"NoiseSource(seed={self.seed})"

    def generator(self, channel: str, path: int = 0) -> np.random.Generator:
        if not 0 <= path < 2 ** 32:
            raise ValueError("path index out of range")
        key = np.array([self.seed, (channel_key(channel) << 32) | int(path)],
                       dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def normals(self, channel: str, n_steps: int, n_paths: int = 1,
                path_offset: int = 0) -> np.ndarray:
        """Standard normals of shape ``(n_paths, n_steps)``."""
        out = np.empty((n_paths, n_steps))
        for i in range(n_paths):
            out[i] = self.generator(channel, path_offset + i).standard_normal(n_steps)
        return out

    def increments(self, channel: str, dt: np.ndarray, n_paths: int = 1,
                   path_offset: int = 0) -> np.ndarray:
        """Brownian increments ``sqrt(dt) * Z`` of shape ``(n_paths, len(dt))``."""
        dt = np.asarray(dt, dtype=float)
        return self.normals(channel, dt.size, n_paths, path_offset) * np.sqrt(dt)

    def stream(self, channel: str, n_paths: int = 1, path_offset: int = 0,
               chunk: int = 4096) -> "NormalStream":
        """Chunked reader over the same streams as :meth:`normals`."""
        return NormalStream(
            [self.generator(channel, path_offset + i) for i in range(n_paths)], chunk)


class NormalStream:
    """Sequential reader of per-path normal streams, one step at a time.

    Used by long-horizon simulations that never store the full noise array.
    """

    def __init__(self, generators, chunk: int = 4096):
        self._gens = generators
        self._chunk = int(chunk)
        self._buf = np.empty((len(generators), 0))
        self._pos = 0

    def next_block(self, n: int) -> np.ndarray:
        """Next ``n`` normals for every path, shape ``(n_paths, n)``."""
        parts = []
        need = n
        while need > 0:
            avail = self._buf.shape[1] - self._pos
            if avail == 0:
                size = max(self._chunk, need)
                self._buf = np.stack([g.standard_normal(size) for g in self._gens])
                self._pos = 0
                avail = size
            take = min(avail, need)
            parts.append(self._buf[:, self._pos:self._pos + take])
            self._pos += take
            need -= take
        return parts[0] if len(parts) == 1 else np.concatenate(parts, axis=1)
