"""Reversible integer 5/3 (Le Gall) wavelet transform.

Images are 2-D ``uint8`` arrays indexed ``[row, column]``. One decomposition
level lifts the columns first and then the rows, with whole-sample symmetric
extension at the borders. The low-pass band of an extent ``n`` keeps
``ceil(n / 2)`` samples and the high-pass band the remaining ``floor(n / 2)``.

Coefficients are stored as ``int32``; 8-bit input grows by well under 16
bits over eight levels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BadResolution, EmptyImage, ShapeMismatch, TooManyLevels

MAX_LEVELS = 8
DEFAULT_LEVELS = 3

COEFF_DTYPE = np.int32


def as_image(image) -> np.ndarray:
    """Validate and return ``image`` as a 2-D ``uint8`` array."""
    arr = np.asarray(image)
    if arr.ndim != 2:
        raise ShapeMismatch(f"image must be 2-D, got shape {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise EmptyImage(f"image has zero extent: {arr.shape[1]}x{arr.shape[0]}")
    if arr.dtype != np.uint8:
        if np.issubdtype(arr.dtype, np.integer) or np.issubdtype(arr.dtype, np.floating):
            if arr.size and (arr.min() < 0 or arr.max() > 255):
                raise ValueError("image samples must lie in [0, 255]")
            if np.issubdtype(arr.dtype, np.floating) and not np.all(arr == np.round(arr)):
                raise ValueError("image samples must be integers")
        arr = arr.astype(np.uint8)
    return arr


def low_len(n: int) -> int:
    return (n + 1) // 2


def high_len(n: int) -> int:
    return n // 2


def ll_shape(height: int, width: int, depth: int) -> tuple[int, int]:
    """Shape of the LL band after ``depth`` ceil-halvings."""
    for _ in range(depth):
        height, width = low_len(height), low_len(width)
    return height, width


def subband_shapes(height: int, width: int, depth: int) -> dict[str, tuple[int, int]]:
    """Shapes of LL/HL/LH/HH at ``depth`` (1 = finest) for a ``height x width`` image."""
    h, w = ll_shape(height, width, depth - 1)
    return {
        "LL": (low_len(h), low_len(w)),
        "HL": (low_len(h), high_len(w)),
        "LH": (high_len(h), low_len(w)),
        "HH": (high_len(h), high_len(w)),
    }


@dataclass
class SubbandPyramid:
    """LL band at the deepest level plus one (HL, LH, HH) triplet per level.

    ``details[0]`` holds depth 1 (the finest), ``details[-1]`` depth ``levels``.
    """

    levels: int
    base_width: int
    base_height: int
    ll: np.ndarray
    details: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = field(default_factory=list)

    def validate(self) -> None:
        if not 0 <= self.levels <= MAX_LEVELS:
            raise ShapeMismatch(f"levels must be in [0, {MAX_LEVELS}], got {self.levels}")
        if len(self.details) != self.levels:
            raise ShapeMismatch(
                f"pyramid declares {self.levels} levels but holds {len(self.details)} detail triplets")
        for depth in range(1, self.levels + 1):
            want = subband_shapes(self.base_height, self.base_width, depth)
            for name, band in zip(("HL", "LH", "HH"), self.details[depth - 1]):
                if band.shape != want[name]:
                    raise ShapeMismatch(
                        f"{name} at depth {depth} has shape {band.shape}, expected {want[name]}")
        want_ll = ll_shape(self.base_height, self.base_width, self.levels)
        if self.ll.shape != want_ll:
            raise ShapeMismatch(f"LL has shape {self.ll.shape}, expected {want_ll}")

    def ll_dims(self, r: int) -> tuple[int, int]:
        """(height, width) of the LL grid at resolution ``r``."""
        check_resolution(r, self.levels)
        return ll_shape(self.base_height, self.base_width, self.levels - r + 1)


def check_resolution(r: int, levels: int) -> None:
    if not 1 <= r <= levels:
        raise BadResolution(f"resolution must be in [1, {levels}], got {r}")


# 1-D lifting along axis 0

def _lift_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = x.shape[0]
    if n == 1:
        return x.copy(), x[:0].copy()
    even = x[0::2]
    odd = x[1::2]
    ne, no = even.shape[0], odd.shape[0]
    if n % 2:
        right = even[1:]
    else:
        right = np.concatenate([even[1:], even[-1:]], axis=0)
    d = odd - ((even[:no] + right) >> 1)
    dr = d if ne == no else np.concatenate([d, d[-1:]], axis=0)
    dl = np.concatenate([dr[:1], dr[:-1]], axis=0)
    s = even + ((dl + dr + 2) >> 2)
    return s, d


def _lift_inverse(s: np.ndarray, d: np.ndarray) -> np.ndarray:
    ne, no = s.shape[0], d.shape[0]
    n = ne + no
    if no == 0:
        return s.copy()
    dr = d if ne == no else np.concatenate([d, d[-1:]], axis=0)
    dl = np.concatenate([dr[:1], dr[:-1]], axis=0)
    even = s - ((dl + dr + 2) >> 2)
    if n % 2:
        right = even[1:]
    else:
        right = np.concatenate([even[1:], even[-1:]], axis=0)
    odd = d + ((even[:no] + right) >> 1)
    out = np.empty((n,) + s.shape[1:], dtype=s.dtype)
    out[0::2] = even
    out[1::2] = odd
    return out


def analyze_level(a: np.ndarray):
    """One 2-D analysis step. Returns ``(LL, HL, LH, HH)``."""
    a = np.asarray(a, dtype=np.int64)
    low, high = _lift_forward(a)
    ll, hl = (b.T for b in _lift_forward(low.T))
    lh, hh = (b.T for b in _lift_forward(high.T))
    return (ll.astype(COEFF_DTYPE), hl.astype(COEFF_DTYPE),
            lh.astype(COEFF_DTYPE), hh.astype(COEFF_DTYPE))


def synthesize_level(ll, hl, lh, hh) -> np.ndarray:
    """Inverse of :func:`analyze_level`; returns the next-finer LL band."""
    ll, hl, lh, hh = (np.asarray(b, dtype=np.int64) for b in (ll, hl, lh, hh))
    if ll.shape[0] != hl.shape[0] or lh.shape[0] != hh.shape[0] \
            or ll.shape[1] != lh.shape[1] or hl.shape[1] != hh.shape[1]:
        raise ShapeMismatch("subband shapes do not tile one decomposition level: "
                            f"LL {ll.shape}, HL {hl.shape}, LH {lh.shape}, HH {hh.shape}")
    if not (0 <= ll.shape[0] - lh.shape[0] <= 1 and 0 <= ll.shape[1] - hl.shape[1] <= 1):
        raise ShapeMismatch("high-pass bands must be the floor share of each extent")
    low = _lift_inverse(ll.T, hl.T).T
    high = _lift_inverse(lh.T, hh.T).T
    return _lift_inverse(low, high).astype(COEFF_DTYPE)


def forward_dwt(image, levels: int = DEFAULT_LEVELS) -> SubbandPyramid:
    """Decompose ``image`` into ``levels`` dyadic levels.

    Raises
    ------
    EmptyImage
        If either extent is zero.
    TooManyLevels
        If ``levels`` is outside ``[0, 8]``.
    """
    img = as_image(image)
    if not 0 <= levels <= MAX_LEVELS:
        raise TooManyLevels(f"levels must be in [0, {MAX_LEVELS}], got {levels}")
    height, width = img.shape
    ll = img.astype(COEFF_DTYPE)
    details = []
    for _ in range(levels):
        ll, hl, lh, hh = analyze_level(ll)
        details.append((hl, lh, hh))
    return SubbandPyramid(levels, width, height, ll, details)


def inverse_dwt(pyramid: SubbandPyramid) -> np.ndarray:
    """Exact inverse of :func:`forward_dwt`; returns a ``uint8`` image."""
    pyramid.validate()
    ll = pyramid.ll
    for hl, lh, hh in reversed(pyramid.details):
        ll = synthesize_level(ll, hl, lh, hh)
    if ll.min() < 0 or ll.max() > 255:
        raise ShapeMismatch("reconstructed samples fall outside [0, 255]")
    return ll.astype(np.uint8)


def reconstruct_ll(pyramid: SubbandPyramid, r: int) -> np.ndarray:
    """LL grid at resolution ``r`` (1 = coarsest, ``levels`` = half size).

    Only the detail triplets at depths deeper than ``levels - r`` are used.
    """
    check_resolution(r, pyramid.levels)
    pyramid.validate()
    ll = pyramid.ll
    target_depth = pyramid.levels - r + 1
    for depth in range(pyramid.levels, target_depth, -1):
        ll = synthesize_level(ll, *pyramid.details[depth - 1])
    return ll
