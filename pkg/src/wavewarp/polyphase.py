"""Polyphase decomposition of 2-D filters and the equivalent subband network.

A filter splits into four components by index parity.  Convolution then
factors through: extract the four polyphase components of the image
(downsample), apply a 4 x 4 matrix of half-size subgrid convolutions (the
z-transform matrix G(z) = H(z^2), with one-sample subgrid delays where index
sums carry), and interleave the four outputs (upsample + delay recombine).
Applied recursively, every level quarters the channel count's inverse: 4^L
channels with filters of side about K/2^L.

Everything here uses periodic (circular) convolution so the algebraic
identity holds without edge cases; the equivalence against direct periodic
convolution is exact up to float rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .field import Field2D

PARITIES = ((0, 0), (1, 0), (0, 1), (1, 1))


@dataclass(frozen=True)
class Filter2D:
    """Odd-sized tap matrix anchored at its center."""

    taps: np.ndarray

    def __post_init__(self):
        t = np.ascontiguousarray(np.asarray(self.taps, dtype=np.float64))
        if t.ndim != 2 or t.shape[0] != t.shape[1]:
            raise ValueError(f"filter must be square, got shape {t.shape}")
        if t.shape[0] % 2 == 0:
            raise ValueError(f"filter side must be odd, got {t.shape[0]}")
        if not np.all(np.isfinite(t)):
            raise ValueError("filter taps must be finite")
        t.setflags(write=False)
        object.__setattr__(self, "taps", t)

    @property
    def k(self) -> int:
        return self.taps.shape[0]


@dataclass(frozen=True)
class SubFilter:
    """Tap matrix whose [0, 0] entry sits at absolute index ``offset``."""

    taps: np.ndarray
    offset: tuple[int, int]


@dataclass(frozen=True)
class PolyphaseBank:
    """The four parity components of a filter, in PARITIES order."""

    components: tuple[SubFilter, SubFilter, SubFilter, SubFilter]
    k: int

    def reassemble(self) -> Filter2D:
        """Interleave the components back; exact integer bookkeeping."""
        r = self.k // 2
        taps = np.zeros((self.k, self.k))
        for parity, comp in zip(PARITIES, self.components):
            for a in range(comp.taps.shape[0]):
                for b in range(comp.taps.shape[1]):
                    n1 = 2 * (a + comp.offset[0]) + parity[0]
                    n2 = 2 * (b + comp.offset[1]) + parity[1]
                    taps[n1 + r, n2 + r] = comp.taps[a, b]
        return Filter2D(taps)


def _split_parity(
    taps: np.ndarray, offset: tuple[int, int]
) -> dict[tuple[int, int], SubFilter]:
    """Parity components of a tap matrix with arbitrary absolute offset."""
    out = {}
    rows = np.arange(taps.shape[0]) + offset[0]
    cols = np.arange(taps.shape[1]) + offset[1]
    for parity in PARITIES:
        ri = np.nonzero(rows % 2 == parity[0])[0]
        ci = np.nonzero(cols % 2 == parity[1])[0]
        if ri.size == 0 or ci.size == 0:
            out[parity] = SubFilter(taps=np.zeros((1, 1)), offset=(0, 0))
            continue
        sub = taps[np.ix_(ri, ci)]
        new_off = (
            (rows[ri[0]] - parity[0]) // 2,
            (cols[ci[0]] - parity[1]) // 2,
        )
        out[parity] = SubFilter(taps=sub, offset=new_off)
    return out


def decompose(h: Filter2D) -> PolyphaseBank:
    """Split a centered filter into its four parity components."""
    r = h.k // 2
    parts = _split_parity(h.taps, (-r, -r))
    return PolyphaseBank(components=tuple(parts[p] for p in PARITIES), k=h.k)


def _conv_offset(x: np.ndarray, sub: SubFilter) -> np.ndarray:
    """Periodic convolution with an offset tap matrix: y[t] = sum h[m] x[t-m]."""
    acc = np.zeros_like(x)
    for a in range(sub.taps.shape[0]):
        for b in range(sub.taps.shape[1]):
            c = sub.taps[a, b]
            if c != 0.0:
                acc += c * np.roll(x, (a + sub.offset[0], b + sub.offset[1]), (0, 1))
    return acc


def direct_convolve(x: Field2D, h: Filter2D) -> Field2D:
    """Plain periodic convolution (reference path for the identities here)."""
    r = h.k // 2
    return Field2D(_conv_offset(x.data, SubFilter(taps=h.taps, offset=(-r, -r))))


def _apply_level(x: np.ndarray, sub: SubFilter, level: int) -> np.ndarray:
    if level == 0:
        return _conv_offset(x, sub)
    n = x.shape[0]
    if n % 2 != 0:
        raise ValueError("image side must be divisible by 2 per level")
    half = n // 2
    if max(sub.taps.shape) > half:
        raise ValueError(
            f"filter too large for image after level reduction: "
            f"{sub.taps.shape} taps on a {half}x{half} subgrid"
        )
    comps = _split_parity(sub.taps, sub.offset)
    xparts = {p: x[p[0] :: 2, p[1] :: 2] for p in PARITIES}
    out = np.empty_like(x)
    for p in PARITIES:
        acc = np.zeros((half, half))
        for l in PARITIES:
            m = ((p[0] - l[0]) % 2, (p[1] - l[1]) % 2)
            carry = ((l[0] + m[0] - p[0]) // 2, (l[1] + m[1] - p[1]) // 2)
            y = _apply_level(xparts[m], comps[l], level - 1)
            if carry != (0, 0):
                y = np.roll(y, carry, (0, 1))
            acc += y
        out[p[0] :: 2, p[1] :: 2] = acc
    return out


def polyphase_apply(x: Field2D, h: Filter2D, levels: int = 1) -> Field2D:
    """Convolve through the recursive polyphase network.

    Equals ``direct_convolve(x, h)`` exactly (float rounding aside); at each
    of the ``levels`` recursions the four image parities are filtered by the
    4 x 4 component matrix on the half grid and re-interleaved.
    """
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    if h.k > x.m // 2:
        raise ValueError(f"filter side {h.k} exceeds M/2 = {x.m // 2}")
    r = h.k // 2
    out = _apply_level(x.data, SubFilter(taps=h.taps, offset=(-r, -r)), levels)
    return Field2D(out)


def relu_split_apply(x: Field2D, h: Filter2D) -> Field2D:
    """Convolution reassembled from its positive and negative ReLU halves."""
    y = direct_convolve(x, h).data
    pos = np.maximum(y, 0.0)
    neg = np.maximum(-y, 0.0)
    return Field2D(pos - neg)


def component_sizes(h: Filter2D, levels: int) -> list[tuple[int, int]]:
    """Tap-matrix shapes of the innermost subgrid filters after ``levels``."""
    r = h.k // 2
    subs = [SubFilter(taps=h.taps, offset=(-r, -r))]
    for _ in range(levels):
        subs = [s for sub in subs for s in _split_parity(sub.taps, sub.offset).values()]
    return [tuple(s.taps.shape) for s in subs]


def equivalence_check(
    k: int, levels: int, seed: int, m: int = 32
) -> tuple[float, bool]:
    """Random filter/image polyphase-vs-direct check; returns (max_err, pass)."""
    rng = np.random.default_rng(seed)
    h = Filter2D(rng.standard_normal((k, k)))
    x = Field2D(rng.standard_normal((m, m)))
    direct = direct_convolve(x, h)
    poly = polyphase_apply(x, h, levels)
    scale = max(float(np.abs(direct.data).max()), 1e-300)
    err = float(np.abs(poly.data - direct.data).max()) / scale
    return err, err <= 1e-10
