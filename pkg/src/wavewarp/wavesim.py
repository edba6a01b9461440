"""Ground-truth wave solvers on the unit square.

``spectral_propagate`` solves the constant-speed wave equation exactly per
Fourier mode (dispersion omega = 2*pi*c*|xi| in the cycles-per-domain
frequency convention).  ``fdtd_propagate`` is a second-order leapfrog
discretization of the symmetric-form operator

    d_tt u = c(x) * laplace(c(x) * u),

which reduces to the standard equation for constant c and keeps the spatial
operator self-adjoint, so a discrete energy is tracked for conservation
checks.  Boundaries are periodic or an exponential sponge layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .field import Field2D, canonical_grid, freq_grid, write_field
from .geometry import WaveSpeed

CFL_LIMIT = 0.5  # for the 5-point leapfrog scheme (conservative)


def _as_speed(c) -> WaveSpeed:
    if isinstance(c, WaveSpeed):
        return c
    return WaveSpeed.constant(float(c))


def spectral_propagate_state(
    p0: Field2D, v0: Field2D | None, c0, t: float
) -> tuple[Field2D, Field2D]:
    """Pressure and its time derivative at time t, exact for constant speed."""
    speed = _as_speed(c0)
    if speed.kind != "constant":
        raise ValueError("spectral propagator requires a constant wave speed")
    c = speed.c0
    m = p0.m
    fx, fy = freq_grid(m)
    omega = 2.0 * np.pi * c * np.hypot(fx, fy)
    ph = np.fft.fft2(p0.data, norm="ortho")
    vh = (
        np.fft.fft2(v0.data, norm="ortho")
        if v0 is not None
        else np.zeros_like(ph)
    )
    cos = np.cos(omega * t)
    sin = np.sin(omega * t)
    with np.errstate(invalid="ignore", divide="ignore"):
        sinc = np.where(omega > 0, sin / np.where(omega > 0, omega, 1.0), t)
    pt = cos * ph + sinc * vh
    vt = -omega * sin * ph + cos * vh
    p = np.fft.ifft2(pt, norm="ortho").real
    v = np.fft.ifft2(vt, norm="ortho").real
    return Field2D(p), Field2D(v)


def spectral_propagate(p0: Field2D, v0: Field2D | None, c0, t: float) -> Field2D:
    return spectral_propagate_state(p0, v0, c0, t)[0]


@dataclass(frozen=True)
class SimConfig:
    """Grid, speed, stepping and boundary for one FDTD run."""

    m: int
    speed: WaveSpeed
    dt: float
    steps: int
    cfl: float
    boundary: str = "periodic"  # "periodic" | "sponge"
    sponge_width: int = 0
    sponge_strength: float = 0.2  # per-step taper depth; <=1% packet reflection

    def __post_init__(self):
        if self.boundary not in ("periodic", "sponge"):
            raise ValueError(f"unknown boundary {self.boundary!r}")
        if self.dt <= 0 or self.steps < 0:
            raise ValueError("dt must be positive and steps nonnegative")
        h = 1.0 / self.m
        limit = CFL_LIMIT * h / self.speed.max_speed
        if self.dt > limit * (1.0 + 1e-12):
            raise ValueError(
                f"CFL violation: dt={self.dt:.3e} exceeds "
                f"{CFL_LIMIT} * h / max_c = {limit:.3e}"
            )
        if self.boundary == "sponge" and self.sponge_width <= 0:
            object.__setattr__(self, "sponge_width", max(self.m // 16, 4))

    @staticmethod
    def from_duration(
        m: int,
        speed: WaveSpeed,
        duration: float,
        cfl: float = 0.3,
        boundary: str = "periodic",
        **kwargs,
    ) -> "SimConfig":
        if not 0.0 < cfl <= CFL_LIMIT:
            raise ValueError(f"cfl target must be in (0, {CFL_LIMIT}], got {cfl}")
        if duration <= 0:
            raise ValueError("duration must be positive")
        dt_max = cfl / (m * speed.max_speed)
        steps = max(1, math.ceil(duration / dt_max))
        return SimConfig(
            m=m,
            speed=speed,
            dt=duration / steps,
            steps=steps,
            cfl=cfl,
            boundary=boundary,
            **kwargs,
        )

    @property
    def duration(self) -> float:
        return self.dt * self.steps


@dataclass(frozen=True)
class WaveState:
    """Leapfrog pair: current field, previous-step field, and the time."""

    p: Field2D
    q: Field2D
    t: float
    config: SimConfig

    def velocity(self) -> np.ndarray:
        return (self.p.data - self.q.data) / self.config.dt


def _laplacian_periodic(w: np.ndarray, h: float) -> np.ndarray:
    return (
        np.roll(w, 1, axis=0)
        + np.roll(w, -1, axis=0)
        + np.roll(w, 1, axis=1)
        + np.roll(w, -1, axis=1)
        - 4.0 * w
    ) / (h * h)


def _laplacian_dirichlet(w: np.ndarray, h: float) -> np.ndarray:
    out = -4.0 * w.copy()
    out[1:, :] += w[:-1, :]
    out[:-1, :] += w[1:, :]
    out[:, 1:] += w[:, :-1]
    out[:, :-1] += w[:, 1:]
    return out / (h * h)


def _sponge_mask(cfg: SimConfig) -> np.ndarray:
    """Per-step multiplicative damping, smooth quadratic ramp in the layer."""
    m, w = cfg.m, cfg.sponge_width
    idx = np.arange(m)
    depth = np.maximum(w - idx, idx - (m - 1 - w))
    ramp = np.clip(depth, 0, w) / w
    d1 = np.exp(-cfg.sponge_strength * ramp**2)
    return np.minimum.outer(d1, d1)


def fdtd_propagate(
    p0: Field2D,
    v0: Field2D | None,
    cfg: SimConfig,
    snapshot_every: int = 0,
    snapshot_dir=None,
    on_step=None,
) -> tuple[Field2D, WaveState]:
    """Run the leapfrog scheme for cfg.steps steps.

    Optionally dumps numbered F2D snapshots every ``snapshot_every`` steps and
    calls ``on_step(step, state)`` after each update.  Aborts with the step
    index if the field goes non-finite.
    """
    if p0.m != cfg.m or (v0 is not None and v0.m != cfg.m):
        raise ValueError("initial fields must match cfg.m")
    h = 1.0 / cfg.m
    grid = canonical_grid(cfg.m).points
    c = cfg.speed.value(grid)
    lap = _laplacian_periodic if cfg.boundary == "periodic" else _laplacian_dirichlet
    damp = _sponge_mask(cfg) if cfg.boundary == "sponge" else None

    u_prev = p0.data.copy()
    if cfg.steps == 0:
        state = WaveState(p=Field2D(u_prev), q=Field2D(u_prev), t=0.0, config=cfg)
        return state.p, state

    v = v0.data if v0 is not None else np.zeros_like(u_prev)
    accel = c * lap(c * u_prev, h)
    u = u_prev + cfg.dt * v + 0.5 * cfg.dt**2 * accel
    if damp is not None:
        u *= damp
        u_prev = u_prev * damp
    _maybe_snapshot(u_prev, 0, snapshot_every, snapshot_dir)
    _emit(on_step, 1, u, u_prev, cfg)
    _maybe_snapshot(u, 1, snapshot_every, snapshot_dir)

    for n in range(1, cfg.steps):
        u_next = 2.0 * u - u_prev + cfg.dt**2 * (c * lap(c * u, h))
        u_prev = u
        u = u_next
        if damp is not None:
            u *= damp
            u_prev = u_prev * damp
        step = n + 1
        if step % 32 == 0 and not np.all(np.isfinite(u)):
            raise RuntimeError(f"FDTD field went non-finite at step {step}")
        _emit(on_step, step, u, u_prev, cfg)
        _maybe_snapshot(u, step, snapshot_every, snapshot_dir)

    if not np.all(np.isfinite(u)):
        raise RuntimeError(f"FDTD field went non-finite at step {cfg.steps}")
    state = WaveState(p=Field2D(u), q=Field2D(u_prev), t=cfg.duration, config=cfg)
    return state.p, state


def _emit(on_step, step, u, u_prev, cfg):
    if on_step is not None:
        on_step(
            step,
            WaveState(p=Field2D(u), q=Field2D(u_prev), t=step * cfg.dt, config=cfg),
        )


def _maybe_snapshot(u, step, every, directory):
    if every and directory is not None:
        if step % every == 0:
            write_field(Field2D(u), Path(directory) / f"step_{step:06d}.f2d")


def energy(state: WaveState) -> float:
    """Discrete wave energy of a leapfrog pair.

    Uses the exactly conserved form for the symmetric spatial operator:
    0.5*||(u^{n+1}-u^n)/dt||^2 + 0.5*<grad(c u^n), grad(c u^{n+1})>, with the
    grid measure h^2.  Constant-speed periodic runs conserve this to roundoff.
    """
    cfg = state.config
    h = 1.0 / cfg.m
    grid = canonical_grid(cfg.m).points
    c = cfg.speed.value(grid)
    wp = c * state.p.data
    wq = c * state.q.data
    vel = (state.p.data - state.q.data) / cfg.dt
    kinetic = 0.5 * np.sum(vel**2) * h * h
    if cfg.boundary == "periodic":
        gp0 = (np.roll(wp, -1, axis=0) - wp) / h
        gq0 = (np.roll(wq, -1, axis=0) - wq) / h
        gp1 = (np.roll(wp, -1, axis=1) - wp) / h
        gq1 = (np.roll(wq, -1, axis=1) - wq) / h
        potential = 0.5 * np.sum(gp0 * gq0 + gp1 * gq1) * h * h
    else:
        # Dirichlet: edges to the zero ghost ring count as well.
        pad_p = np.pad(wp, 1)
        pad_q = np.pad(wq, 1)
        gp0 = np.diff(pad_p, axis=0) / h
        gq0 = np.diff(pad_q, axis=0) / h
        gp1 = np.diff(pad_p, axis=1) / h
        gq1 = np.diff(pad_q, axis=1) / h
        potential = 0.5 * (np.sum(gp0 * gq0) + np.sum(gp1 * gq1)) * h * h
    return float(kinetic + potential)
