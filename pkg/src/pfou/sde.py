"""Euler-Maruyama paths of the periodic-mean fOU models of the first and second kind."""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .basis import BasisSpec, DriftParams
from .fgn import (CirculantSampler, NoiseIncrements, TimeGrid, check_hurst,
                  sample_fbm_increments, sample_fgn_uniform, make_rng)
from .kernels import y1_increment_autocovariance

__all__ = [
    "FIRST_KIND",
    "SECOND_KIND",
    "ModelSpec",
    "SamplePath",
    "euler_path",
    "drift_on_grid",
    "first_kind_noise",
    "simulate_first_kind",
    "y1_sampler",
    "simulate_y1_increments",
    "simulate_second_kind",
    "simulate",
    "write_path_csv",
    "read_path_csv",
    "PathFormatError",
]

FIRST_KIND = "first_kind"
SECOND_KIND = "second_kind"
TIME_CHANGE_SUBSTEPS = 4
TIME_CHANGE_CAP = 8192


class PathFormatError(ValueError):
    """A path file is malformed or does not cover whole periods."""


@dataclass(frozen=True)
class ModelSpec:
    drift: DriftParams
    basis: BasisSpec = field(default_factory=BasisSpec)
    kind: str = FIRST_KIND

    def __post_init__(self):
        if self.kind not in (FIRST_KIND, SECOND_KIND):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.drift.p != self.basis.p:
            raise ValueError("drift and basis dimensions differ")

    @property
    def H(self) -> float:
        return self.drift.H


@dataclass
class SamplePath:
    """Path on the grid k/m, k = 0..n m.  ``x`` and ``noise`` may carry a
    leading replication axis."""

    grid: TimeGrid
    x: np.ndarray
    noise: np.ndarray
    meta: dict

    @property
    def m(self) -> int:
        return int(self.meta["m"])

    @property
    def n(self) -> int:
        return int(self.meta["n"])

    @property
    def step(self) -> float:
        return 1.0 / self.m

    def replicate(self, r: int) -> "SamplePath":
        return SamplePath(self.grid, self.x[r], self.noise[r], dict(self.meta))


def drift_on_grid(drift: DriftParams, basis: BasisSpec, t: np.ndarray) -> np.ndarray:
    """``sum_i mu_i phi_i(t)``."""
    return drift.mu @ basis.values(t)


def euler_path(forcing: np.ndarray, alpha: float, increments: np.ndarray,
               step: float) -> np.ndarray:
    """Euler scheme ``x_{k+1} = x_k + (forcing_k - alpha x_k) step + dW_k`` from x_0 = 0."""
    u = forcing * step + increments
    beta = 1.0 - alpha * step
    body = lfilter([1.0], [1.0, -beta], u, axis=-1)
    zero = np.zeros(body.shape[:-1] + (1,))
    return np.concatenate([zero, body], axis=-1)


def _grid(n: int, m: int) -> TimeGrid:
    if n < 1 or m < 2:
        raise ValueError("need n >= 1 periods and m >= 2 steps per period")
    return TimeGrid(np.arange(n * m + 1) / m, step=1.0 / m)


def first_kind_noise(H: float, n: int, m: int, seed: int, size=None) -> np.ndarray:
    return sample_fgn_uniform(H, n * m, 1.0 / m, seed, size).values


def _simulate(model: ModelSpec, n: int, m: int, seed: int, increments: np.ndarray,
              scheme: str, noise_kind: str) -> SamplePath:
    grid = _grid(n, m)
    forcing = drift_on_grid(model.drift, model.basis, grid.points[:-1])
    x = euler_path(forcing, model.drift.alpha, increments, grid.step)
    meta = {
        "kind": model.kind,
        "H": model.H,
        "alpha": model.drift.alpha,
        "mu": model.drift.mu.tolist(),
        "p": model.basis.p,
        "basis": model.basis.kind,
        "seed": int(seed),
        "n": int(n),
        "m": int(m),
        "scheme": scheme,
        "noise": noise_kind,
    }
    return SamplePath(grid, x, increments, meta)


def simulate_first_kind(model: ModelSpec, n: int, m: int, seed: int,
                        noise: str = "fbm", size: int | None = None) -> SamplePath:
    """Euler path of ``dX = (sum mu_i phi_i - alpha X) dt + dB^H``.

    ``noise='zero'`` drops the driving noise (deterministic skeleton).
    ``size`` simulates that many paths from one seed in a single batch.
    """
    _grid(n, m)
    if noise == "zero":
        shape = (n * m,) if size is None else (size, n * m)
        incr = np.zeros(shape)
    elif noise == "fbm":
        incr = first_kind_noise(model.H, n, m, seed, size)
    else:
        raise ValueError(f"unknown noise mode {noise!r}")
    return _simulate(model, n, m, seed, incr, "euler", "zero" if noise == "zero" else "fbm")


@lru_cache(maxsize=32)
def y1_sampler(H: float, count: int, step: float) -> CirculantSampler:
    H = check_hurst(H)
    return CirculantSampler(lambda k: y1_increment_autocovariance(H, k, step), count)


def simulate_y1_increments(H: float, n: int, m: int, seed: int,
                           method: str = "stationary_cov",
                           size: int | None = None,
                           substeps: int = TIME_CHANGE_SUBSTEPS) -> NoiseIncrements:
    """Increments of ``Y_t = int_0^t e^{-s} dB^H_{a_s}`` with ``a_s = H e^{s/H}``.

    ``stationary_cov`` is exact in law (circulant embedding of the increment
    autocovariance).  ``time_change`` samples fBm increments on the grid
    ``a_{s_j}`` with ``substeps`` points per step, each weighted by
    ``e^{-s}`` at the substep midpoint, and sums them per step.
    """
    H = check_hurst(H)
    count = n * m
    step = 1.0 / m
    grid = TimeGrid.uniform(count + 1, step)
    if method == "stationary_cov":
        values = y1_sampler(H, count, step).sample(make_rng(seed), size)
        meta = {"method": method}
    elif method == "time_change":
        fine = count * substeps
        if fine > TIME_CHANGE_CAP:
            raise ValueError(f"time_change needs {fine} fBm increments, cap is {TIME_CHANGE_CAP}")
        s = np.arange(fine + 1) * (step / substeps)
        points = H * np.exp(s / H)
        weights = np.exp(-0.5 * (s[:-1] + s[1:]))
        xi = sample_fbm_increments(H, points, seed, weights=weights, size=size,
                                   cap=TIME_CHANGE_CAP)
        values = xi.reshape(xi.shape[:-1] + (count, substeps)).sum(axis=-1)
        meta = {"method": method, "substeps": substeps}
    else:
        raise ValueError(f"unknown Y1 sampling method {method!r}")
    return NoiseIncrements(values, grid, seed, meta)


def simulate_second_kind(model: ModelSpec, n: int, m: int, seed: int,
                         noise: str = "y1", method: str = "stationary_cov",
                         size: int | None = None) -> SamplePath:
    """Euler path of ``dX = (sum mu_i phi_i - alpha X) dt + dY^(1)``."""
    _grid(n, m)
    if noise == "zero":
        incr = np.zeros((n * m,) if size is None else (size, n * m))
        scheme = "euler"
    elif noise == "y1":
        incr = simulate_y1_increments(model.H, n, m, seed, method, size).values
        scheme = f"euler/{method}"
    else:
        raise ValueError(f"unknown noise mode {noise!r}")
    return _simulate(model, n, m, seed, incr, scheme, noise)


def simulate(model: ModelSpec, n: int, m: int, seed: int, noise: str | None = None,
             size: int | None = None) -> SamplePath:
    if model.kind == FIRST_KIND:
        return simulate_first_kind(model, n, m, seed, noise or "fbm", size=size)
    return simulate_second_kind(model, n, m, seed, noise or "y1", size=size)


def _fmt(v: float) -> str:
    return repr(float(v))


def write_path_csv(path: SamplePath, dest, extra_meta: dict | None = None) -> None:
    """Write ``t,x,dnoise`` rows; metadata goes in ``#``-prefixed JSON lines first.

    ``dnoise`` on row k is the noise increment over [t_k, t_{k+1}]; the last
    row leaves it empty.
    """
    if path.x.ndim != 1:
        raise ValueError("write one replication at a time")
    meta = dict(path.meta)
    if extra_meta:
        meta.update(extra_meta)
    buf = io.StringIO()
    buf.write("# " + json.dumps(meta, sort_keys=True) + "\n")
    buf.write("t,x,dnoise\n")
    t, x, d = path.grid.points, path.x, path.noise
    for k in range(t.size):
        dn = _fmt(d[k]) if k < d.size else ""
        buf.write(f"{_fmt(t[k])},{_fmt(x[k])},{dn}\n")
    Path(dest).write_text(buf.getvalue(), newline="\n")


def read_path_csv(src) -> SamplePath:
    """Parse a path file, checking for a uniform grid of whole periods from t = 0."""
    text = Path(src).read_text()
    meta: dict = {}
    rows = []
    header = None
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        if line.startswith("#"):
            try:
                meta.update(json.loads(line[1:]))
            except json.JSONDecodeError:
                pass
            continue
        if header is None:
            header = [h.strip() for h in line.split(",")]
            if header[:2] != ["t", "x"]:
                raise PathFormatError(f"line {lineno}: header must start with t,x")
            continue
        cells = line.split(",")
        try:
            t = float(cells[0])
            x = float(cells[1])
            dn = float(cells[2]) if len(cells) > 2 and cells[2].strip() else np.nan
        except (ValueError, IndexError) as exc:
            raise PathFormatError(f"line {lineno}: cannot parse {line!r}") from exc
        rows.append((t, x, dn))
    if header is None or len(rows) < 3:
        raise PathFormatError("path file needs a header and at least three rows")
    arr = np.array(rows)
    t = arr[:, 0]
    if t[0] != 0.0:
        raise PathFormatError("path must start at t = 0")
    steps = np.diff(t)
    step = steps.mean()
    if np.max(np.abs(steps - step)) > 1e-9 * max(1.0, t[-1]):
        raise PathFormatError("time grid is not uniform")
    m = int(round(1.0 / step))
    if m < 2 or abs(m * step - 1.0) > 1e-9:
        raise PathFormatError(f"step {step} does not divide the unit period")
    count = t.size - 1
    if count % m:
        raise PathFormatError(
            f"partial period: {count} steps is not a multiple of m = {m}")
    n = count // m
    meta = {**meta, "m": m, "n": n}
    meta.setdefault("noise", "unknown")
    grid = TimeGrid(np.arange(count + 1) / m, step=1.0 / m)
    return SamplePath(grid, arr[:, 1].copy(), arr[:-1, 2].copy(), meta)
