"""Dyadic-parabolic tiling of the frequency plane and the matching filter bank.

The plane is split radially into octave bands (log2-radius) and each band into
angular wedges.  All transitions are raised cosines of relative width ``beta``,
applied directly to the squared windows, so overlapping windows sum to one
*analytically*: the rising edge of one window is ``sin^2`` where the falling
edge of its neighbour is ``cos^2``.  Everything below the coarsest band is an
isotropic lowpass residual, everything above the finest band a highpass
residual; together with the directional windows they tile every grid frequency
exactly.

For real images, wedges come in antipodal pairs.  The bank stores one window
per pair (the sum of both wedges), explicitly symmetrized under index negation
so filtered channels are real to machine precision.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field as dfield

import numpy as np

from .field import Field2D, Spectrum2D, fft2, freq_grid, ifft2


@dataclass(frozen=True)
class BoxSpec:
    """Geometry of one directional box (the +nu wedge of a stored pair)."""

    scale: int
    wedge_index: int
    nu: tuple[float, float]
    r_lo: float
    r_hi: float
    angular_half_width: float
    n_wedges: int


@dataclass(frozen=True)
class FrequencyTiling:
    """Sampled window bank on the M x M frequency grid.

    ``windows[i]`` is the squared directional window of box ``boxes[i]``
    (antipodal pair combined); ``lowpass``/``highpass`` are the residual
    windows.  All windows plus residuals sum to 1 at every grid frequency.
    """

    m: int
    k_min: int
    k_max: int
    wedges: tuple[int, ...]
    beta: float
    boxes: tuple[BoxSpec, ...]
    windows: np.ndarray = dfield(repr=False)  # (n_boxes, M, M)
    lowpass: np.ndarray = dfield(repr=False)
    highpass: np.ndarray = dfield(repr=False)

    @property
    def n_boxes(self) -> int:
        return len(self.boxes)

    @property
    def r_min(self) -> float:
        return float(2.0**self.k_min)

    @property
    def r_max(self) -> float:
        return float(2.0 ** (self.k_max + 1))

    def partition_sum(self) -> np.ndarray:
        return self.windows.sum(axis=0) + self.lowpass + self.highpass

    def partition_defect(self) -> float:
        return float(np.abs(self.partition_sum() - 1.0).max())

    def to_config(self) -> dict:
        return {
            "k_min": self.k_min,
            "k_max": self.k_max,
            "wedges": list(self.wedges),
            "beta": self.beta,
        }


def _rising(u: np.ndarray) -> np.ndarray:
    """Raised-cosine step: 0 for u<=0, 1 for u>=1, sin^2(pi u/2) between."""
    u = np.clip(u, 0.0, 1.0)
    return np.sin(0.5 * np.pi * u) ** 2


def _edge_rise(x, at, beta):
    return _rising((x - at) / beta + 0.5)


def _edge_fall(x, at, beta):
    return _rising((at - x) / beta + 0.5)


def _negation_symmetrize(w: np.ndarray) -> np.ndarray:
    # Average with w evaluated at -xi (indices negated mod M).
    flipped = np.roll(w[::-1, ::-1], (1, 1), axis=(0, 1))
    return 0.5 * (w + flipped)


def build_tiling(
    m: int,
    k_min: int,
    k_max: int,
    wedges_per_scale,
    beta: float = 0.5,
) -> FrequencyTiling:
    """Build the window bank on an M x M frequency grid.

    ``wedges_per_scale`` gives the full-circle wedge count per scale, coarse to
    fine.  Counts must be even (antipodal pairing) except the degenerate value
    1, which makes that scale an isotropic annulus.  Requires 2**k_max < M/2 so
    the finest band sits below Nyquist.
    """
    wedges = tuple(int(n) for n in wedges_per_scale)
    scales = list(range(k_min, k_max + 1))
    if k_min < 1 or k_max < k_min:
        raise ValueError(f"need 1 <= k_min <= k_max, got ({k_min}, {k_max})")
    if len(wedges) != len(scales):
        raise ValueError(
            f"expected {len(scales)} wedge counts for scales {k_min}..{k_max}, "
            f"got {len(wedges)}"
        )
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must be in (0, 1), got {beta}")
    if 2**k_max >= m / 2:
        raise ValueError(
            f"Nyquist violation: 2**k_max = {2**k_max} must be < M/2 = {m // 2}"
        )
    for n in wedges:
        if n != 1 and (n < 2 or n % 2 != 0):
            raise ValueError(f"wedge count must be even (or the degenerate 1), got {n}")

    _warn_on_scaling(scales, wedges)

    fx, fy = freq_grid(m)
    radius = np.hypot(fx, fy)
    with np.errstate(divide="ignore"):
        rho = np.where(radius > 0, np.log2(np.maximum(radius, 1e-300)), -1e9)
    theta = np.arctan2(fy, fx)

    lowpass = _edge_fall(rho, k_min, beta)
    highpass = _edge_rise(rho, k_max + 1, beta)

    boxes: list[BoxSpec] = []
    windows: list[np.ndarray] = []
    for k, n_w in zip(scales, wedges):
        radial = _edge_rise(rho, k, beta) * _edge_fall(rho, k + 1, beta)
        r_lo = 2.0 ** (k - beta / 2)
        r_hi = 2.0 ** (k + 1 + beta / 2)
        if n_w == 1:
            boxes.append(
                BoxSpec(k, 0, (1.0, 0.0), r_lo, r_hi, np.pi, 1)
            )
            windows.append(_negation_symmetrize(radial))
            continue
        delta = 2.0 * np.pi / n_w
        half_width = 0.5 * (1.0 + beta) * delta
        for j in range(n_w // 2):
            center = j * delta
            w = radial * _wedge_pair_profile(theta, center, n_w, beta)
            boxes.append(
                BoxSpec(
                    k,
                    j,
                    (float(np.cos(center)), float(np.sin(center))),
                    r_lo,
                    r_hi,
                    half_width,
                    n_w,
                )
            )
            windows.append(_negation_symmetrize(w))

    bank = np.ascontiguousarray(np.stack(windows, axis=0))
    bank.setflags(write=False)
    lowpass = _negation_symmetrize(lowpass)
    highpass = _negation_symmetrize(highpass)
    lowpass.setflags(write=False)
    highpass.setflags(write=False)
    return FrequencyTiling(
        m=m,
        k_min=k_min,
        k_max=k_max,
        wedges=wedges,
        beta=beta,
        boxes=tuple(boxes),
        windows=bank,
        lowpass=lowpass,
        highpass=highpass,
    )


def _wedge_pair_profile(theta, center, n_w, beta):
    """Angular window of the antipodal wedge pair centered at center and center+pi."""
    delta = 2.0 * np.pi / n_w

    def dist(c):
        t = (theta - c) / delta
        return np.abs((t + n_w / 2.0) % n_w - n_w / 2.0)

    return _edge_fall(dist(center), 0.5, beta) + _edge_fall(
        dist(center + np.pi), 0.5, beta
    )


def _warn_on_scaling(scales, wedges) -> None:
    directional = [(k, n) for k, n in zip(scales, wedges) if n > 1]
    for (k0, n0), (k1, n1) in zip(directional, directional[1:]):
        if k1 - k0 == 2 and not 1.5 <= n1 / n0 <= 3.0:
            warnings.warn(
                f"wedge count {n0}->{n1} from scale {k0} to {k1} is far from "
                "the parabolic doubling rule",
                stacklevel=3,
            )
    if len(directional) >= 2:
        ratios = [n * 2.0 ** (-k / 2) for k, n in directional]
        if max(ratios) / min(ratios) > 2.0:
            warnings.warn(
                "angular widths deviate from parabolic scaling by more than 2x",
                stacklevel=3,
            )


def analyze(f: Field2D, t: FrequencyTiling) -> list[Field2D]:
    """Directional bandpass channels of ``f`` (residuals excluded)."""
    if f.m != t.m:
        raise ValueError(f"field size {f.m} does not match tiling size {t.m}")
    spec = fft2(f).data
    return [ifft2_real(w * spec) for w in t.windows]


def residual_channels(f: Field2D, t: FrequencyTiling) -> tuple[Field2D, Field2D]:
    """Lowpass and highpass residual channels of ``f``."""
    if f.m != t.m:
        raise ValueError(f"field size {f.m} does not match tiling size {t.m}")
    spec = fft2(f).data
    return ifft2_real(t.lowpass * spec), ifft2_real(t.highpass * spec)


def synthesize(channels, t: FrequencyTiling) -> Field2D:
    """Plain sum of directional channels (the partition makes this exact)."""
    if len(channels) != t.n_boxes:
        raise ValueError(f"expected {t.n_boxes} channels, got {len(channels)}")
    acc = np.zeros((t.m, t.m))
    for c in channels:
        if c.m != t.m:
            raise ValueError(f"channel size {c.m} does not match tiling size {t.m}")
        acc += c.data
    return Field2D(acc)


def reconstruct(f: Field2D, t: FrequencyTiling) -> Field2D:
    """analyze + residuals summed back; equals ``f`` to roundoff."""
    low, high = residual_channels(f, t)
    out = synthesize(analyze(f, t), t).data + low.data + high.data
    return Field2D(out)


def inband(f: Field2D, t: FrequencyTiling) -> Field2D:
    """Projection of ``f`` onto the directional band (residuals removed)."""
    spec = fft2(f).data
    return ifft2_real(t.windows.sum(axis=0) * spec)


def ifft2_real(spec_data: np.ndarray) -> Field2D:
    return ifft2(Spectrum2D(spec_data))
