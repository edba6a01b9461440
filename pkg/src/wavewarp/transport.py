"""Image metrics: entropically smoothed quadratic transport, MSE, and SSIM.

Sinkhorn runs fully in the log domain so tiny regularization (down to 1e-4 in
squared domain units) stays stable.  The squared-Euclidean cost on pixel
centers separates per axis, so the 2-D log-sum-exp reduces to two passes with
M x M x M temporaries and the full M^2 x M^2 cost matrix is never built.

Smoothed-cost convention: value = <plan, C> + eps * sum(plan * (log plan - 1)),
the plain entropic objective.  It tends to the exact transport cost as eps -> 0
and may be negative for concentrated measures (the self-cost of a Dirac is
-eps).  The debiased divergence S(a,b) = W(a,b) - (W(a,a) + W(b,b))/2 removes
that bias and vanishes at a == b.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .field import Field2D

SWEEP_COLUMNS = ("mse", "ssim", "w2_smoothed", "w2_divergence")


@dataclass(frozen=True)
class DiscreteMeasure:
    """Nonnegative weights on an m x m pixel grid, summing to one."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.ascontiguousarray(np.asarray(self.weights, dtype=np.float64))
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError(f"weights must be square 2-D, got shape {w.shape}")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def m(self) -> int:
        return self.weights.shape[0]

    @staticmethod
    def from_array(a: np.ndarray) -> "DiscreteMeasure":
        a = np.abs(np.asarray(a, dtype=np.float64))
        s = a.sum()
        if s <= 0:
            raise ValueError("cannot normalize an all-zero array to a measure")
        w = a / s
        return DiscreteMeasure(w / w.sum())


def to_measure(f: Field2D) -> DiscreteMeasure:
    """|f| normalized to unit mass."""
    return DiscreteMeasure.from_array(f.data)


@dataclass(frozen=True)
class SinkhornResult:
    value: float  # smoothed transport cost (see module docstring)
    cost: float  # <plan, C>, the plain transported cost
    iterations: int
    marginal_violation: float
    converged: bool


def _lse_pair(lx: np.ndarray, w: np.ndarray) -> np.ndarray:
    """out[i, j] = logsumexp_k(lx[i, k] + w[k, j]) without forming exp early."""
    t = lx[:, :, None] + w[None, :, :]
    mx = t.max(axis=1)
    safe = np.where(np.isfinite(mx), mx, 0.0)
    s = np.exp(t - safe[:, None, :]).sum(axis=1)
    with np.errstate(divide="ignore"):
        return np.where(np.isfinite(mx), safe + np.log(s), -np.inf)


class _SeparableCost:
    """Pairwise 1-D squared distances and their -C/eps log-kernels."""

    def __init__(self, m: int, epsilon: float):
        x = np.arange(m) / m
        d2 = (x[:, None] - x[None, :]) ** 2
        self.c1 = d2
        self.l1 = -d2 / epsilon

    def lse_apply(self, psi: np.ndarray) -> np.ndarray:
        """logsumexp_q(psi(q) - C(p, q)/eps) over the 2-D index q."""
        inner = _lse_pair(self.l1, psi.T).T  # over second axis
        return _lse_pair(self.l1, inner)  # over first axis


def sinkhorn_w2(
    a: DiscreteMeasure,
    b: DiscreteMeasure,
    epsilon: float = 1e-3,
    max_iter: int = 5000,
    tol: float = 1e-9,
    anneal: bool = True,
) -> SinkhornResult:
    """Log-domain Sinkhorn fixed point for the squared-distance cost.

    With ``anneal`` the solver warm-starts the potentials through a geometric
    ladder of larger regularizations before iterating at the requested
    ``epsilon`` (plain epsilon-scaling; small epsilon converges far faster).
    Stops when both marginal L1 violations drop below ``tol``; exhausting
    ``max_iter`` returns the current value with ``converged=False``.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if a.m != b.m:
        raise ValueError(f"measure sizes differ: {a.m} vs {b.m}")
    with np.errstate(divide="ignore"):
        log_a = np.log(a.weights)
        log_b = np.log(b.weights)

    # Potentials divided by their own epsilon; rescaled between ladder stages.
    phi = np.where(np.isfinite(log_a), 0.0, -np.inf)
    psi = np.where(np.isfinite(log_b), 0.0, -np.inf)

    ladder = []
    if anneal:
        e = 0.5
        while e > epsilon * 4.0:
            ladder.append(e)
            e /= 4.0
    stage_cap = max(50, max_iter // 20)

    iterations = 0
    for i, eps_stage in enumerate(ladder):
        if iterations >= max_iter:
            break
        kernel = _SeparableCost(a.m, eps_stage)
        phi, psi, used, _, _ = _sinkhorn_loop(
            phi, psi, a.weights, b.weights, log_a, log_b, kernel,
            min(stage_cap, max_iter - iterations), max(tol, 1e-6),
        )
        iterations += used
        # Warm start the next stage: keep f = eps*phi, rescale phi = f/eps'.
        nxt = ladder[i + 1] if i + 1 < len(ladder) else epsilon
        ratio = eps_stage / nxt
        phi = np.where(np.isfinite(phi), phi * ratio, -np.inf)
        psi = np.where(np.isfinite(psi), psi * ratio, -np.inf)

    kernel = _SeparableCost(a.m, epsilon)
    phi, psi, used, col_violation, converged = _sinkhorn_loop(
        phi, psi, a.weights, b.weights, log_a, log_b, kernel,
        max(max_iter - iterations, 1), tol,
    )
    iterations += used

    f_pot = epsilon * phi
    g_pot = epsilon * psi
    t_phi = kernel.lse_apply(phi)
    col = _plan_marginal(psi, t_phi)
    value = (
        _masked_dot(a.weights, f_pot)
        + _masked_dot(col, g_pot)
        - epsilon  # total plan mass is one after the closing row update
    )
    cost = _plan_cost(phi, psi, kernel)
    return SinkhornResult(
        value=float(value),
        cost=float(cost),
        iterations=iterations,
        marginal_violation=col_violation,
        converged=converged,
    )


def _sinkhorn_loop(phi, psi, a_w, b_w, log_a, log_b, kernel, max_iter, tol):
    """Alternate dual updates until both marginal violations are below tol."""
    iterations = 0
    converged = False
    col_violation = np.inf
    t_phi = kernel.lse_apply(phi)
    while iterations < max_iter:
        iterations += 1
        psi = log_b - t_phi
        t_psi = kernel.lse_apply(psi)
        row_violation = float(np.abs(_plan_marginal(phi, t_psi) - a_w).sum())
        phi = log_a - t_psi
        t_phi = kernel.lse_apply(phi)
        col_violation = float(np.abs(_plan_marginal(psi, t_phi) - b_w).sum())
        if row_violation <= tol and col_violation <= tol:
            converged = True
            break
    return phi, psi, iterations, col_violation, converged


def _plan_marginal(pot: np.ndarray, lse_other: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        out = np.exp(pot + lse_other)
    return np.where(np.isfinite(pot), out, 0.0)


def _masked_dot(weights: np.ndarray, pot: np.ndarray) -> float:
    mask = weights > 0
    return float(np.sum(weights[mask] * pot[mask]))


def _plan_cost(phi: np.ndarray, psi: np.ndarray, kernel: _SeparableCost) -> float:
    """<plan, C> via the per-axis pair marginals of the plan.

    P0[i1,i2] = sum_{j1,j2} P factorizes as exp(L) * (Ephi @ K @ Epsi^T) with
    per-row max shifts; the other axis uses per-column shifts.
    """
    k1 = np.exp(kernel.l1)

    def axis_cost(pa: np.ndarray, pb: np.ndarray) -> float:
        shift_a = pa.max(axis=1)
        shift_b = pb.max(axis=1)
        shift_a = np.where(np.isfinite(shift_a), shift_a, 0.0)
        shift_b = np.where(np.isfinite(shift_b), shift_b, 0.0)
        ea = np.exp(pa - shift_a[:, None])
        eb = np.exp(pb - shift_b[:, None])
        inner = ea @ k1 @ eb.T
        with np.errstate(divide="ignore"):
            log_pair = kernel.l1 + shift_a[:, None] + shift_b[None, :] + np.log(inner)
        return float(np.sum(np.exp(log_pair) * kernel.c1))

    return axis_cost(phi, psi) + axis_cost(phi.T, psi.T)


def sinkhorn_divergence(
    a: DiscreteMeasure,
    b: DiscreteMeasure,
    epsilon: float = 1e-3,
    max_iter: int = 5000,
    tol: float = 1e-9,
) -> float:
    """Debiased smoothed transport: W(a,b) - W(a,a)/2 - W(b,b)/2."""
    w_ab = sinkhorn_w2(a, b, epsilon, max_iter, tol).value
    w_aa = sinkhorn_w2(a, a, epsilon, max_iter, tol).value
    w_bb = sinkhorn_w2(b, b, epsilon, max_iter, tol).value
    return w_ab - 0.5 * (w_aa + w_bb)


def mse(f: Field2D, g: Field2D) -> float:
    if f.m != g.m:
        raise ValueError(f"field sizes differ: {f.m} vs {g.m}")
    return float(np.mean((f.data - g.data) ** 2))


def ssim(
    f: Field2D,
    g: Field2D,
    window: int = 8,
    k1: float = 0.01,
    k2: float = 0.03,
) -> float:
    """Mean structural similarity of the magnitudes |f|, |g|.

    Uniform sliding window (every fully interior position), biased moments,
    stabilizers C1 = (k1 L)^2 and C2 = (k2 L)^2 with dynamic range L taken
    from max |f|.
    """
    if f.m != g.m:
        raise ValueError(f"field sizes differ: {f.m} vs {g.m}")
    if not 1 <= window <= f.m:
        raise ValueError(f"window must be in [1, {f.m}], got {window}")
    x = np.abs(f.data)
    y = np.abs(g.data)
    scale = float(x.max())
    if scale == 0.0:
        scale = float(y.max())
        if scale == 0.0:
            return 1.0
    c1 = (k1 * scale) ** 2
    c2 = (k2 * scale) ** 2
    n = window * window
    mu_x = _window_sum(x, window) / n
    mu_y = _window_sum(y, window) / n
    var_x = _window_sum(x * x, window) / n - mu_x**2
    var_y = _window_sum(y * y, window) / n - mu_y**2
    cov = _window_sum(x * y, window) / n - mu_x * mu_y
    score = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
        (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    )
    return float(score.mean())


def _window_sum(a: np.ndarray, w: int) -> np.ndarray:
    s = np.cumsum(np.cumsum(np.pad(a, ((1, 0), (1, 0))), axis=0), axis=1)
    return s[w:, w:] - s[:-w, w:] - s[w:, :-w] + s[:-w, :-w]


def metric_sweep(
    f: Field2D,
    shifts,
    axis: int = 0,
    metrics=SWEEP_COLUMNS,
    epsilon: float = 1e-3,
    max_iter: int = 5000,
    tol: float = 1e-9,
) -> list[dict]:
    """Compare f against circular shifts of itself under several metrics.

    Returns one row per shift with the requested metric columns; transport
    metrics operate on the normalized magnitude measures.
    """
    unknown = set(metrics) - set(SWEEP_COLUMNS)
    if unknown:
        raise ValueError(f"unknown metrics {sorted(unknown)}")
    need_transport = "w2_smoothed" in metrics or "w2_divergence" in metrics
    base = to_measure(f) if need_transport else None
    w_self = (
        sinkhorn_w2(base, base, epsilon, max_iter, tol).value
        if "w2_divergence" in metrics
        else None
    )
    rows = []
    for delta in shifts:
        shifted = Field2D(np.roll(f.data, int(delta), axis=axis))
        row = {"delta": int(delta)}
        if "mse" in metrics:
            row["mse"] = mse(f, shifted)
        if "ssim" in metrics:
            row["ssim"] = ssim(f, shifted)
        if need_transport:
            if int(delta) % f.m == 0:
                # Unshifted: both solves coincide with the cached self-cost.
                if w_self is None:
                    w_self = sinkhorn_w2(base, base, epsilon, max_iter, tol).value
                w_ab = w_bb = w_self
            else:
                moved = to_measure(shifted)
                w_ab = sinkhorn_w2(base, moved, epsilon, max_iter, tol).value
                w_bb = (
                    sinkhorn_w2(moved, moved, epsilon, max_iter, tol).value
                    if "w2_divergence" in metrics
                    else None
                )
            if "w2_smoothed" in metrics:
                row["w2_smoothed"] = w_ab
            if "w2_divergence" in metrics:
                row["w2_divergence"] = w_ab - 0.5 * (w_self + w_bb)
        rows.append(row)
    return rows


def write_sweep_csv(rows, path, metrics=SWEEP_COLUMNS) -> None:
    """CSV with header delta,<metrics...> at full float precision."""
    cols = [c for c in SWEEP_COLUMNS if c in metrics]
    with open(path, "w") as fh:
        fh.write("delta," + ",".join(cols) + "\n")
        for row in rows:
            fh.write(
                ",".join([str(row["delta"])] + [f"{row[c]:.17g}" for c in cols]) + "\n"
            )
