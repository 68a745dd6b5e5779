"""Region geometry: bounding boxes, Sobol points, QMC volume, grid masks.

The Sobol generator is self-contained: direction numbers for dimensions up
to 8 are embedded below (the first columns of the standard Joe-Kuo table)
and verified against a frozen checksum at import.  Points are produced in
Gray-code order with 32-bit precision, optionally with a seeded digital
shift; the unshifted stream is bit-stable across runs and platforms.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError

N_BITS = 32
MAX_DIM = 8

# Dimension j >= 2 is defined by a primitive polynomial of degree s with
# coefficient bits a, and s initial direction integers m (odd, m_k < 2^k).
# Dimension 1 is the van der Corput sequence (all m_k = 1).
_DIRECTIONS = {
    2: (1, 0, (1,)),
    3: (2, 1, (1, 3)),
    4: (3, 1, (1, 3, 1)),
    5: (3, 2, (1, 1, 1)),
    6: (4, 1, (1, 1, 3, 3)),
    7: (4, 4, (1, 3, 5, 13)),
    8: (5, 2, (1, 1, 5, 5, 17)),
}

_TABLE_SHA256 = "e4dd4f0917c4fef3a9a4a846b910c498d445f0994b155d8067adddebb1f572a2"


def _table_checksum() -> str:
    text = ";".join(
        f"{d}:{s}:{a}:{','.join(map(str, m))}" for d, (s, a, m) in sorted(_DIRECTIONS.items())
    )
    return hashlib.sha256(text.encode()).hexdigest()


def _verify_table() -> None:
    if _table_checksum() != _TABLE_SHA256:
        raise RuntimeError("Sobol direction-number table is corrupted")
    for d, (s, a, m) in _DIRECTIONS.items():
        if len(m) != s or a >= 1 << max(s - 1, 0):
            raise RuntimeError(f"malformed direction entry for dimension {d}")
        if any(mk % 2 == 0 or mk >= 1 << (k + 1) for k, mk in enumerate(m)):
            raise RuntimeError(f"direction integers out of range for dimension {d}")


def _direction_vectors(dim_index: int) -> np.ndarray:
    """The 32 direction integers (scaled by 2^32) for one coordinate."""
    v = np.zeros(N_BITS, dtype=np.uint64)
    if dim_index == 1:
        for k in range(N_BITS):
            v[k] = np.uint64(1) << np.uint64(N_BITS - 1 - k)
        return v
    s, a, m = _DIRECTIONS[dim_index]
    for k in range(s):
        v[k] = np.uint64(m[k]) << np.uint64(N_BITS - 1 - k)
    for k in range(s, N_BITS):
        vk = v[k - s] ^ (v[k - s] >> np.uint64(s))
        for i in range(1, s):
            if (a >> (s - 1 - i)) & 1:
                vk ^= v[k - i]
        v[k] = vk
    return v


class SobolGenerator:
    """Streaming Sobol sequence in [0,1)^d, d <= 8.

    ``shift_seed`` applies a per-dimension random digital shift (XOR on the
    32-bit integer states), giving a randomized but equally well spread
    point set; None leaves the plain sequence whose first point is the
    origin.
    """

    def __init__(self, dimension: int, shift_seed: int | None = None):
        if not 1 <= dimension <= MAX_DIM:
            raise InvalidArgumentError(f"dimension must be in 1..{MAX_DIM}, got {dimension}")
        self.dimension = dimension
        self._v = np.stack([_direction_vectors(j) for j in range(1, dimension + 1)])
        self._state = np.zeros(dimension, dtype=np.uint64)
        self._index = 0
        if shift_seed is None:
            self._shift = np.zeros(dimension, dtype=np.uint64)
        else:
            rng = np.random.default_rng(shift_seed)
            self._shift = rng.integers(0, 1 << N_BITS, size=dimension, dtype=np.uint64)
        self.shift_seed = shift_seed

    def next_points(self, n: int) -> np.ndarray:
        """The next n points of the stream, shape (n, d)."""
        if n < 1:
            raise InvalidArgumentError(f"n must be >= 1, got {n}")
        # Point i has integer state s_i with s_0 = 0 (the origin) and
        # s_i = s_{i-1} XOR v[ctz(i)]: Gray-code stepping.
        ids = np.arange(self._index, self._index + n, dtype=np.uint64)
        low = (ids & (~ids + np.uint64(1))).astype(np.float64)
        ctz = np.round(np.log2(np.where(low > 0, low, 1.0))).astype(int)
        steps = self._v[:, ctz].T.copy()  # (n, d)
        if self._index == 0:
            steps[0] = 0
        steps[0] ^= self._state
        states = np.bitwise_xor.accumulate(steps, axis=0)
        self._state = states[-1]
        self._index += n
        return (states ^ self._shift).astype(np.float64) / float(1 << N_BITS)


def sobol_points(gen: SobolGenerator, n: int) -> np.ndarray:
    return gen.next_points(n)


@dataclass(frozen=True)
class BoundingBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if lower.shape != upper.shape or lower.ndim != 1:
            raise InvalidArgumentError("bounds must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise InvalidArgumentError("bounds must be finite")
        if not np.all(lower < upper):
            raise InvalidArgumentError("need lower < upper in every dimension")

    @property
    def dimension(self) -> int:
        return self.lower.size

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    def map_unit(self, u: np.ndarray) -> np.ndarray:
        """Map points of [0,1)^d onto the box."""
        return self.lower + np.asarray(u) * (self.upper - self.lower)


@dataclass(frozen=True)
class VolumeEstimate:
    value: float
    n_points: int
    box: BoundingBox


def bounding_box(points: np.ndarray, pad_fraction: float = 0.1) -> BoundingBox:
    """Axis-aligned hull of the points, padded per side by a range fraction.

    A dimension with zero range is padded by pad_fraction of 1.0 instead,
    so repeated coordinates still give a usable box (pad_fraction must then
    be positive).
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[0] < 2:
        raise InvalidArgumentError("need at least 2 points in an (n, d) array")
    if pad_fraction < 0:
        raise InvalidArgumentError(f"pad_fraction must be >= 0, got {pad_fraction}")
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    rng = hi - lo
    pad = pad_fraction * np.where(rng > 0, rng, 1.0)
    return BoundingBox(lower=lo - pad, upper=hi + pad)


def estimate_volume(membership, box: BoundingBox, n_points: int, shift_seed: int | None = None) -> VolumeEstimate:
    """Box volume times the fraction of Sobol points that are members.

    ``membership`` takes an (n, d) array of points in target space and
    returns a boolean array of length n; mass outside the box is not
    measured.
    """
    if n_points < 1:
        raise InvalidArgumentError(f"n_points must be >= 1, got {n_points}")
    gen = SobolGenerator(box.dimension, shift_seed=shift_seed)
    pts = box.map_unit(gen.next_points(n_points))
    inside = np.asarray(membership(pts), dtype=bool)
    if inside.shape != (n_points,):
        raise InvalidArgumentError("membership must return one boolean per point")
    return VolumeEstimate(value=box.volume * float(inside.mean()), n_points=n_points, box=box)


def region_mask(membership, box: BoundingBox, resolution: int) -> np.ndarray:
    """Cell-center membership on a regular 2-d grid, shape (res, res).

    Entry [i, j] is the cell centered at the i-th coordinate along axis 1
    and the j-th along axis 2; flattening row-major scans axis-2 fastest.
    """
    if box.dimension != 2:
        raise InvalidArgumentError(f"mask extraction needs a 2-d box, got {box.dimension}-d")
    if resolution < 2:
        raise InvalidArgumentError(f"resolution must be >= 2, got {resolution}")
    extent = box.upper - box.lower
    c1 = box.lower[0] + (np.arange(resolution) + 0.5) * extent[0] / resolution
    c2 = box.lower[1] + (np.arange(resolution) + 0.5) * extent[1] / resolution
    g1, g2 = np.meshgrid(c1, c2, indexing="ij")
    pts = np.stack([g1.ravel(), g2.ravel()], axis=1)
    inside = np.asarray(membership(pts), dtype=bool)
    return inside.reshape(resolution, resolution)


def save_mask_csv(mask: np.ndarray, box: BoundingBox, path: str | Path) -> None:
    """Write the mask as rows of (x1, x2, inside)."""
    res1, res2 = mask.shape
    extent = box.upper - box.lower
    c1 = box.lower[0] + (np.arange(res1) + 0.5) * extent[0] / res1
    c2 = box.lower[1] + (np.arange(res2) + 0.5) * extent[1] / res2
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x1", "x2", "inside"])
        for i in range(res1):
            for j in range(res2):
                writer.writerow([f"{c1[i]:.10g}", f"{c2[j]:.10g}", int(mask[i, j])])


_verify_table()
