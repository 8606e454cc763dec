"""
Seedable drivers on the absolute grid k * dt: Brownian motion, Ornstein-Uhlenbeck
and the Langevin-type SDE dY = -mu Y^p dt + dW. All three read the same
increment streams, so for one seed they are driven by the same noise.
"""

import math
from dataclasses import dataclass
from typing import Iterator, List, Optional, Tuple

import numpy as np
from scipy.signal import lfilter

from config.logging import core_logger as logger
from config.settings import DEFAULT_SEED, LANGEVIN_LIMIT, PATHS_PER_STREAM
from efmsig.core.signature import PiecewisePath
from efmsig.lab.rng import NormalStream, stream_layout
from efmsig.manager import BatchManager, run_ordered
from shared.errors import BlowUpError, DomainError


@dataclass(frozen=True)
class SimConfig:
    """
    Simulation window [t0, t1] on the grid k * dt, preceded by `burn_in` time
    units that emulate the infinite past. Window ends are snapped to the grid.
    """

    seed: int = DEFAULT_SEED
    dt: float = 1e-3
    t0: float = 0.0
    t1: float = 1.0
    d: int = 1
    burn_in: float = 0.0

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError(f"dt must be positive, got {self.dt}")
        if not self.t1 > self.t0:
            raise DomainError(f"Need t1 > t0, got [{self.t0}, {self.t1}]")
        if self.burn_in < 0:
            raise DomainError(f"burn_in must be >= 0, got {self.burn_in}")
        if self.d < 1:
            raise DomainError(f"d must be >= 1, got {self.d}")

    def step_of(self, t: float) -> int:
        return int(round(t / self.dt))

    @property
    def window(self) -> Tuple[int, int, int]:
        """(first step including burn-in, step of t0, step of t1)."""
        k0 = self.step_of(self.t0)
        k_burn = k0 - int(math.ceil(self.burn_in / self.dt - 1e-9))
        return k_burn, k0, self.step_of(self.t1)

    def times(self, k_start: int, k_end: int) -> np.ndarray:
        return np.arange(k_start, k_end + 1) * self.dt


class BrownianStream:
    """Brownian increments of one stream of paths, addressed by grid step."""

    def __init__(self, cfg: SimConfig, stream_id: int, used: Optional[int] = None,
                 paths_per_stream: int = PATHS_PER_STREAM):
        self.cfg = cfg
        self.normals = NormalStream(cfg.seed, stream_id, cfg.d, paths_per_stream, used=used)

    def increments(self, k_start: int, k_end: int) -> np.ndarray:
        return math.sqrt(self.cfg.dt) * self.normals.normals(k_start, k_end)

    def chunks(self, k_start: int, k_end: int) -> Iterator[Tuple[int, np.ndarray]]:
        """(first step, increments) block by block, so long runs stay in memory bounds."""
        size = self.normals.steps_per_block
        k = k_start
        while k < k_end:
            k_next = min(k_end, (k // size + 1) * size)
            yield k, self.increments(k, k_next)
            k = k_next

    def initial(self) -> np.ndarray:
        return self.normals.initial()


def stream_slices(n_paths: int, paths_per_stream: int = PATHS_PER_STREAM) -> List[Tuple[int, int]]:
    """(stream id, paths taken from it) for every stream needed by n_paths paths."""
    streams, last = stream_layout(n_paths, paths_per_stream)
    return [(s, paths_per_stream if s < streams - 1 else last) for s in range(streams)]


def _assemble(cfg: SimConfig, build, n_paths: Optional[int],
              manager: Optional[BatchManager]) -> Tuple[np.ndarray, np.ndarray]:
    k_start, _, k_end = cfg.window
    count = 1 if n_paths is None else n_paths

    def task(piece):
        stream_id, used = piece
        return build(BrownianStream(cfg, stream_id, used), k_start, k_end)

    values = np.concatenate(run_ordered(task, stream_slices(count), manager), axis=0)
    if n_paths is None:
        values = values[0]
    return cfg.times(k_start, k_end), values


def _bm_values(stream: BrownianStream, k_start: int, k_end: int) -> np.ndarray:
    increments = stream.increments(k_start, k_end)
    start = np.zeros(increments.shape[:1] + (1,) + increments.shape[2:])
    return np.concatenate([start, np.cumsum(increments, axis=1)], axis=1)


def simulate_bm(cfg: SimConfig, n_paths: Optional[int] = None,
                manager: Optional[BatchManager] = None) -> PiecewisePath:
    """
    Brownian motion on [t0 - burn_in, t1], zero at the first grid point.
    Without n_paths a single unbatched path (path 0) is returned.
    """
    times, values = _assemble(cfg, _bm_values, n_paths, manager)
    logger.info(f"Simulated {n_paths or 1} Brownian paths with {times.size} samples, seed {cfg.seed}")
    return PiecewisePath(times, values)


def simulate_ou(cfg: SimConfig, mu: float, from_stationary: bool = True,
                n_paths: Optional[int] = None, manager: Optional[BatchManager] = None) -> PiecewisePath:
    """
    Exact OU recursion U_{k+1} = exp(-mu dt) U_k + sqrt((1 - exp(-2 mu dt)) / (2 mu)) Z_k,
    started from N(0, 1/(2 mu)) or from 0.
    """
    if not mu > 0:
        raise DomainError(f"mu must be positive, got {mu}")

    decay = math.exp(-mu * cfg.dt)
    scale = math.sqrt(-math.expm1(-2.0 * mu * cfg.dt) / (2.0 * mu))

    def build(stream: BrownianStream, k_start: int, k_end: int) -> np.ndarray:
        noise = scale * stream.normals.normals(k_start, k_end)
        start = stream.initial() / math.sqrt(2.0 * mu) if from_stationary else np.zeros(noise[:, 0].shape)
        path, _ = lfilter([1.0], [1.0, -decay], noise, axis=1, zi=(decay * start)[:, None, :])
        return np.concatenate([start[:, None, :], path], axis=1)

    times, values = _assemble(cfg, build, n_paths, manager)
    return PiecewisePath(times, values)


def simulate_langevin(cfg: SimConfig, mu: float, p: int, n_paths: Optional[int] = None,
                      manager: Optional[BatchManager] = None, y0: float = 0.0) -> PiecewisePath:
    """Euler-Maruyama for dY = -mu Y^p dt + dW, driven by the Brownian increments of the seed."""
    if not mu > 0:
        raise DomainError(f"mu must be positive, got {mu}")
    if p < 1 or p % 2 == 0:
        raise DomainError(f"p must be an odd integer >= 1, got {p}")

    dt = cfg.dt

    def build(stream: BrownianStream, k_start: int, k_end: int) -> np.ndarray:
        increments = stream.increments(k_start, k_end)
        values = np.empty((increments.shape[0], increments.shape[1] + 1, increments.shape[2]))
        values[:, 0] = y0
        for k in range(increments.shape[1]):
            y = values[:, k]
            values[:, k + 1] = y - mu * y**p * dt + increments[:, k]
            if np.any(np.abs(values[:, k + 1]) > LANGEVIN_LIMIT):
                t = (k_start + k + 1) * dt
                logger.error(f"Langevin path left |Y| <= {LANGEVIN_LIMIT:g} at t={t:.6g}; dt={dt} too large")
                raise BlowUpError(f"Euler-Maruyama unstable at t={t:.6g}, reduce dt", time=t)
        return values

    times, values = _assemble(cfg, build, n_paths, manager)
    return PiecewisePath(times, values)
