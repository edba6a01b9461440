"""Canonical transformations for wave-packet routing.

Three ways to produce the per-orientation spatial warp ``T_nu``:

* closed form for constant wave speed (straight characteristics),
* Runge-Kutta integration of the Hamilton flow of ``H(x, xi) = c(x)|xi|``
  for variable speed,
* ridge least-squares fitting of the warp from ray start/end pairs, binned
  by launch direction.

Branch convention, pinned by the constant-speed case: the "+" branch routes a
packet that travelled *along* ``+nu``, so its source point lies behind the
observation point, ``T_nu(y) = y - t*c*nu``.  The "-" branch is the mirror.
Warp points may leave the unit square; the resampler zero-fills there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .field import canonical_grid

RAY_CSV_HEADER = "x1,x2,xi1,xi2,y1,y2,eta1,eta2,T"


@dataclass(frozen=True)
class WaveSpeed:
    """Background speed c(x) > 0, evaluable (with gradient) at any point.

    Both families extend smoothly and stay positive outside the unit square,
    so rays may legitimately leave the domain.
    """

    kind: str  # "constant" | "gaussian"
    c0: float = 1.0
    center: tuple[float, float] = (0.5, 0.5)
    width: float = 0.15
    amplitude: float = 0.0
    baseline: float = 1.0

    def __post_init__(self):
        if self.kind == "constant":
            if self.c0 <= 0:
                raise ValueError(f"constant speed must be positive, got {self.c0}")
        elif self.kind == "gaussian":
            if self.width <= 0:
                raise ValueError(f"lens width must be positive, got {self.width}")
            if self.baseline + min(self.amplitude, 0.0) <= 0:
                raise ValueError(
                    f"speed not positive everywhere: baseline {self.baseline} "
                    f"+ amplitude {self.amplitude}"
                )
        else:
            raise ValueError(f"unknown wave speed kind {self.kind!r}")

    @staticmethod
    def constant(c0: float) -> "WaveSpeed":
        return WaveSpeed(kind="constant", c0=c0)

    @staticmethod
    def gaussian_lens(center, width, amplitude, baseline=1.0) -> "WaveSpeed":
        return WaveSpeed(
            kind="gaussian",
            center=(float(center[0]), float(center[1])),
            width=float(width),
            amplitude=float(amplitude),
            baseline=float(baseline),
        )

    @property
    def max_speed(self) -> float:
        if self.kind == "constant":
            return self.c0
        return self.baseline + max(self.amplitude, 0.0)

    @property
    def min_speed(self) -> float:
        if self.kind == "constant":
            return self.c0
        return self.baseline + min(self.amplitude, 0.0)

    def value(self, points: np.ndarray) -> np.ndarray:
        # The closed forms are smooth and positive on all of R^2, so rays that
        # leave the unit square keep a C^inf speed (no boundary clamping:
        # a clamped extension would kink the gradient and wreck RK4
        # conservation for exiting rays).
        p = np.asarray(points, dtype=np.float64)
        if self.kind == "constant":
            return np.full(p.shape[:-1], self.c0)
        d2 = (p[..., 0] - self.center[0]) ** 2 + (p[..., 1] - self.center[1]) ** 2
        return self.baseline + self.amplitude * np.exp(-d2 / (2.0 * self.width**2))

    def gradient(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        if self.kind == "constant":
            return np.zeros_like(p)
        diff = p - np.asarray(self.center)
        d2 = (diff**2).sum(axis=-1)
        bump = self.amplitude * np.exp(-d2 / (2.0 * self.width**2))
        return -diff * (bump / self.width**2)[..., None]


@dataclass(frozen=True)
class RayState:
    """Phase-space point (position, momentum), |momentum| > 0."""

    x: tuple[float, float]
    xi: tuple[float, float]

    def __post_init__(self):
        if math.hypot(*self.xi) <= 0.0:
            raise ValueError("ray momentum must be nonzero")


@dataclass(frozen=True)
class RaySample:
    """One ray: state at t=0, state at t=T, and the duration T."""

    start: RayState
    end: RayState
    duration: float


def hamiltonian(state: RayState, speed: WaveSpeed) -> float:
    x = np.asarray(state.x)
    return float(speed.value(x) * math.hypot(*state.xi))


def hamiltonian_mismatch(sample: RaySample, speed: WaveSpeed) -> float:
    return abs(hamiltonian(sample.start, speed) - hamiltonian(sample.end, speed))


def _flow_derivatives(x, xi, speed):
    n = np.linalg.norm(xi, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise ValueError("momentum magnitude underflow along ray path")
    c = speed.value(x)[..., None]
    dx = c * xi / n
    dxi = -n * speed.gradient(x)
    return dx, dxi


def trace_rays(
    x0: np.ndarray, xi0: np.ndarray, speed: WaveSpeed, duration: float, steps: int
) -> tuple[np.ndarray, np.ndarray]:
    """RK4 integration of the Hamilton flow for a batch of rays.

    ``x0``, ``xi0`` have shape (N, 2); returns end positions and momenta of
    the same shape.  ``duration`` may be negative (time-reversed flow).
    """
    if steps < 16:
        raise ValueError(f"need at least 16 integration steps, got {steps}")
    x = np.array(x0, dtype=np.float64)
    xi = np.array(xi0, dtype=np.float64)
    h = duration / steps
    for _ in range(steps):
        k1x, k1xi = _flow_derivatives(x, xi, speed)
        k2x, k2xi = _flow_derivatives(x + 0.5 * h * k1x, xi + 0.5 * h * k1xi, speed)
        k3x, k3xi = _flow_derivatives(x + 0.5 * h * k2x, xi + 0.5 * h * k2xi, speed)
        k4x, k4xi = _flow_derivatives(x + h * k3x, xi + h * k3xi, speed)
        x = x + (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        xi = xi + (h / 6.0) * (k1xi + 2.0 * k2xi + 2.0 * k3xi + k4xi)
    return x, xi


def trace_ray(
    state: RayState, speed: WaveSpeed, duration: float, steps: int = 512
) -> RayState:
    """End state of a single ray after time ``duration``."""
    x, xi = trace_rays(
        np.asarray(state.x)[None, :], np.asarray(state.xi)[None, :], speed, duration, steps
    )
    return RayState(x=(float(x[0, 0]), float(x[0, 1])), xi=(float(xi[0, 0]), float(xi[0, 1])))


@dataclass(frozen=True)
class WarpedGrid:
    """Target sample coordinates T_nu(y) for every canonical grid point y."""

    points: np.ndarray  # (M, M, 2)
    nu: tuple[float, float]
    branch: str  # "+" | "-"

    def __post_init__(self):
        p = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64))
        if p.ndim != 3 or p.shape[2] != 2 or p.shape[0] != p.shape[1]:
            raise ValueError(f"warped grid must have shape (M, M, 2), got {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("warped grid contains non-finite entries")
        if self.branch not in ("+", "-"):
            raise ValueError(f"branch must be '+' or '-', got {self.branch!r}")
        p.setflags(write=False)
        object.__setattr__(self, "points", p)

    @property
    def m(self) -> int:
        return self.points.shape[0]


def _branch_sign(branch: str) -> float:
    if branch == "+":
        return -1.0
    if branch == "-":
        return 1.0
    raise ValueError(f"branch must be '+' or '-', got {branch!r}")


def constant_speed_warp(
    nu, t: float, c0: float, branch: str, m: int
) -> WarpedGrid:
    """Exact warp for constant speed: a rigid shift by -+ t*c0*nu."""
    if c0 <= 0:
        raise ValueError(f"speed must be positive, got {c0}")
    nu = np.asarray(nu, dtype=np.float64)
    grid = canonical_grid(m).points
    pts = grid + _branch_sign(branch) * t * c0 * nu
    return WarpedGrid(points=pts, nu=(float(nu[0]), float(nu[1])), branch=branch)


def trace_warped_grid(
    nu, speed: WaveSpeed, duration: float, branch: str, m: int, steps: int = 256
) -> WarpedGrid:
    """Warp by tracing one ray per grid point.

    Grid points are the time-T positions; launching the flow with momentum
    -+nu (per branch) for time T lands on the t=0 source positions, which is
    the time-reversed flow of a +-nu packet.
    """
    nu = np.asarray(nu, dtype=np.float64)
    nu = nu / np.linalg.norm(nu)
    grid = canonical_grid(m).points.reshape(-1, 2)
    xi0 = np.broadcast_to(_branch_sign(branch) * nu, grid.shape)
    x, _ = trace_rays(grid, xi0, speed, duration, steps)
    return WarpedGrid(
        points=x.reshape(m, m, 2), nu=(float(nu[0]), float(nu[1])), branch=branch
    )


def warp_jacobian(grid: WarpedGrid) -> np.ndarray:
    """Jacobian determinant of the warp per grid point (finite differences).

    Central differences in the interior, one-sided at the edges; sign changes
    flag folds/caustics.
    """
    h = 1.0 / grid.m
    tx, ty = grid.points[..., 0], grid.points[..., 1]
    d00 = np.gradient(tx, h, axis=0)
    d01 = np.gradient(tx, h, axis=1)
    d10 = np.gradient(ty, h, axis=0)
    d11 = np.gradient(ty, h, axis=1)
    return d00 * d11 - d01 * d10


# ---------------------------------------------------------------------------
# Warp fitting from ray endpoint data.


@dataclass(frozen=True)
class WarpBasis:
    """Fixed regression basis for the displacement field.

    ``poly``: tensor-product monomials y1^a * y2^b with a, b <= degree.
    ``rbf``: Gaussian bumps on a centers_per_axis^2 lattice over the unit
    square (width = width_scale * lattice spacing) plus the affine tail
    {1, y1, y2}; bumps alone cannot represent the mean displacement.
    """

    kind: str = "rbf"
    degree: int = 1
    centers_per_axis: int = 8
    width_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("poly", "rbf"):
            raise ValueError(f"unknown basis kind {self.kind!r}")
        if self.kind == "poly" and self.degree < 0:
            raise ValueError("polynomial degree must be >= 0")
        if self.kind == "rbf" and (self.centers_per_axis < 1 or self.width_scale <= 0):
            raise ValueError("rbf basis needs centers_per_axis >= 1, width_scale > 0")

    @property
    def size(self) -> int:
        if self.kind == "poly":
            return (self.degree + 1) ** 2
        return self.centers_per_axis**2 + 3

    def design_matrix(self, points: np.ndarray) -> np.ndarray:
        y1, y2 = points[:, 0], points[:, 1]
        if self.kind == "poly":
            cols = [
                (y1**a) * (y2**b)
                for a in range(self.degree + 1)
                for b in range(self.degree + 1)
            ]
            return np.stack(cols, axis=1)
        n = self.centers_per_axis
        centers = (np.arange(n) + 0.5) / n
        cx, cy = np.meshgrid(centers, centers, indexing="ij")
        sigma = self.width_scale / n
        d2 = (y1[:, None] - cx.ravel()[None, :]) ** 2 + (
            y2[:, None] - cy.ravel()[None, :]
        ) ** 2
        bumps = np.exp(-d2 / (2.0 * sigma**2))
        tail = np.stack([np.ones_like(y1), y1, y2], axis=1)
        return np.concatenate([bumps, tail], axis=1)


class FittedWarp:
    """Per-direction-bin warp predictor fitted from ray samples.

    Maps (arrival point y, launch direction nu) to the source point x; also
    predicts the arrival momentum direction (unused by the resampler but
    reported alongside).
    """

    def __init__(self, basis, bins, duration, coefficients, train_rms):
        self.basis = basis
        self.bins = bins
        self.duration = duration
        self.coefficients = coefficients  # bin index -> (B, 4)
        self.train_rms = train_rms  # bin index -> float

    def bin_of(self, nu) -> int:
        angle = math.atan2(nu[1], nu[0])
        return int(round(angle / (2.0 * np.pi / self.bins))) % self.bins

    def bin_direction(self, b: int) -> np.ndarray:
        angle = 2.0 * np.pi * b / self.bins
        return np.array([np.cos(angle), np.sin(angle)])

    def predict(self, y: np.ndarray, nu) -> tuple[np.ndarray, np.ndarray]:
        """Source positions and normalized arrival momenta for points ``y``."""
        b = self.bin_of(nu)
        if b not in self.coefficients:
            raise ValueError(f"no samples were fitted for direction bin {b}")
        phi = self.basis.design_matrix(np.asarray(y, dtype=np.float64))
        pred = phi @ self.coefficients[b]
        return np.asarray(y) + pred[:, :2], pred[:, 2:]

    def warped_grid(self, m: int, nu, branch: str = "+") -> WarpedGrid:
        nu = np.asarray(nu, dtype=np.float64)
        query = nu if branch == "+" else -nu
        if branch not in ("+", "-"):
            raise ValueError(f"branch must be '+' or '-', got {branch!r}")
        grid = canonical_grid(m).points.reshape(-1, 2)
        x, _ = self.predict(grid, query)
        return WarpedGrid(
            points=x.reshape(m, m, 2), nu=(float(nu[0]), float(nu[1])), branch=branch
        )


def fit_warp(
    samples,
    basis: WarpBasis,
    ridge: float = 1e-8,
    orientation_bins: int = 8,
) -> FittedWarp:
    """Fit displacement fields x - y per launch-direction bin.

    Regression targets are the displacement and the (magnitude-normalized)
    arrival momentum; each bin needs at least 3x as many samples as basis
    functions.  A zero ridge falls back to plain least squares and reports
    rank deficiency.
    """
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    if not samples:
        raise ValueError("no samples to fit")
    durations = np.array([s.duration for s in samples])
    if np.abs(durations - durations[0]).max() > 1e-12:
        raise ValueError("samples must share one propagation time")

    start_x = np.array([s.start.x for s in samples])
    start_xi = np.array([s.start.xi for s in samples])
    end_y = np.array([s.end.x for s in samples])
    end_eta = np.array([s.end.xi for s in samples])
    mag = np.linalg.norm(start_xi, axis=1, keepdims=True)

    angles = np.arctan2(start_xi[:, 1], start_xi[:, 0])
    width = 2.0 * np.pi / orientation_bins
    bins = np.round(angles / width).astype(int) % orientation_bins

    n_basis = basis.size
    coefficients = {}
    train_rms = {}
    for b in np.unique(bins):
        sel = bins == b
        n = int(sel.sum())
        if n < 3 * n_basis:
            raise ValueError(
                f"direction bin {b}: {n} samples for {n_basis} basis functions "
                f"(need >= {3 * n_basis}); sampling is too degenerate"
            )
        phi = basis.design_matrix(end_y[sel])
        target = np.concatenate(
            [start_x[sel] - end_y[sel], end_eta[sel] / mag[sel]], axis=1
        )
        if ridge == 0.0:
            beta, _, rank, _ = np.linalg.lstsq(phi, target, rcond=None)
            if rank < n_basis:
                raise ValueError(
                    f"direction bin {b}: design matrix is rank deficient "
                    f"({rank} < {n_basis}); sampling is degenerate"
                )
        else:
            gram = phi.T @ phi + ridge * np.eye(n_basis)
            try:
                beta = np.linalg.solve(gram, phi.T @ target)
            except np.linalg.LinAlgError as exc:
                raise ValueError(
                    f"direction bin {b}: normal equations singular after ridge"
                ) from exc
        coefficients[int(b)] = beta
        resid = phi @ beta[:, :2] - (start_x[sel] - end_y[sel])
        train_rms[int(b)] = float(np.sqrt(np.mean(np.sum(resid**2, axis=1))))

    return FittedWarp(
        basis=basis,
        bins=orientation_bins,
        duration=float(durations[0]),
        coefficients=coefficients,
        train_rms=train_rms,
    )


def endpoint_rmse(warp: FittedWarp, samples) -> float:
    """Root-mean-square source-position error of the fit on given samples."""
    err2 = []
    for s in samples:
        nu = np.asarray(s.start.xi) / math.hypot(*s.start.xi)
        x_hat, _ = warp.predict(np.asarray(s.end.x)[None, :], nu)
        err2.append(np.sum((x_hat[0] - np.asarray(s.start.x)) ** 2))
    return float(np.sqrt(np.mean(err2)))


def sample_rays(
    speed: WaveSpeed,
    duration: float,
    n_rays: int,
    n_directions: int,
    steps: int,
    rng: np.random.Generator,
) -> list[RaySample]:
    """Trace rays from uniform positions along a fixed fan of directions.

    Directions are the orientation-bin centers used by ``fit_warp``, so the
    per-bin fits see a single exact launch direction each.
    """
    x0 = rng.uniform(0.0, 1.0, size=(n_rays, 2))
    dir_idx = rng.integers(0, n_directions, size=n_rays)
    angles = 2.0 * np.pi * dir_idx / n_directions
    xi0 = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    x1, eta = trace_rays(x0, xi0, speed, duration, steps)
    return [
        RaySample(
            start=RayState(x=(x0[i, 0], x0[i, 1]), xi=(xi0[i, 0], xi0[i, 1])),
            end=RayState(x=(x1[i, 0], x1[i, 1]), xi=(eta[i, 0], eta[i, 1])),
            duration=duration,
        )
        for i in range(n_rays)
    ]


def save_rays(samples, path) -> None:
    rows = np.array(
        [
            [*s.start.x, *s.start.xi, *s.end.x, *s.end.xi, s.duration]
            for s in samples
        ]
    )
    np.savetxt(path, rows, delimiter=",", fmt="%.17g", header=RAY_CSV_HEADER, comments="")


def load_rays(path) -> list[RaySample]:
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if rows.shape[1] != 9:
        raise ValueError(f"{path}: expected 9 columns ({RAY_CSV_HEADER})")
    return [
        RaySample(
            start=RayState(x=(r[0], r[1]), xi=(r[2], r[3])),
            end=RayState(x=(r[4], r[5]), xi=(r[6], r[7])),
            duration=r[8],
        )
        for r in rows
    ]
