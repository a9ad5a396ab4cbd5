"""Hilbert-curve construction, rotation, cropping, and 2D<->1D (de)serialization.

Coordinate convention: row 0 is the top row. The canonical direction-1 curve of
order 1 visits bottom-left, top-left, top-right, bottom-right. Directions 2-4
are successive 90-degree clockwise rotations of the whole curve. Feature maps
smaller than the curve's square are cropped bottom-left, so the kept cells are
re-indexed by subtracting (side - H, 0).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

from .tensor import ShapeError, Tensor, reshape, take

__all__ = [
    "HilbertCurve", "ScanOrder", "build_curve", "rotate", "fit_to_shape",
    "scan_order", "serialize", "deserialize",
]


@dataclass(frozen=True)
class HilbertCurve:
    """A full side x side Hilbert visitation sequence (side = 2**order)."""

    order: int
    side: int
    cells: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class ScanOrder:
    """Bijective visit sequence over an H x W grid for one scan direction."""

    direction: int
    height: int
    width: int
    visit: tuple[tuple[int, int], ...]

    def flat_indices(self) -> tuple[int, ...]:
        return tuple(r * self.width + c for r, c in self.visit)


def _d2xy(side: int, d: int) -> tuple[int, int]:
    """Curve position d -> (x, y) with y growing upward; classic bit-twiddling."""
    x = y = 0
    t = d
    s = 1
    while s < side:
        rx = 1 & (t // 2)
        ry = 1 & (t ^ rx)
        if ry == 0:
            if rx == 1:
                x = s - 1 - x
                y = s - 1 - y
            x, y = y, x
        x += s * rx
        y += s * ry
        t //= 4
        s *= 2
    return x, y


def build_curve(order: int) -> HilbertCurve:
    """Standard U-shape recursive Hilbert curve of the given order."""
    if order <= 0:
        raise ValueError(f"curve order must be >= 1, got {order}")
    side = 1 << order
    cells = []
    for d in range(side * side):
        x, y = _d2xy(side, d)
        cells.append((side - 1 - y, x))  # row 0 at top
    return HilbertCurve(order=order, side=side, cells=tuple(cells))


def rotate(curve: HilbertCurve, direction: int) -> HilbertCurve:
    """Apply (direction - 1) successive 90-degree clockwise rotations."""
    if direction not in (1, 2, 3, 4):
        raise ValueError(f"direction must be in 1..4, got {direction}")
    cells = curve.cells
    side = curve.side
    for _ in range(direction - 1):
        cells = tuple((c, side - 1 - r) for r, c in cells)
    return HilbertCurve(order=curve.order, side=side, cells=cells)


def fit_to_shape(curve: HilbertCurve, height: int, width: int,
                 direction: int = 1) -> ScanOrder:
    """Crop a curve to H x W, keeping the bottom-left block of its square."""
    if height < 1 or width < 1:
        raise ValueError(f"degenerate shape {height}x{width}")
    if curve.side < max(height, width):
        raise ShapeError(
            f"curve side {curve.side} too small for shape {height}x{width}")
    row0 = curve.side - height
    visit = tuple((r - row0, c) for r, c in curve.cells
                  if r >= row0 and c < width)
    return ScanOrder(direction=direction, height=height, width=width, visit=visit)


@lru_cache(maxsize=None)
def scan_order(direction: int, height: int, width: int) -> ScanOrder:
    """Visit order for one direction over an H x W map, built once and cached.

    Uses the smallest curve whose square covers the map, rotated then cropped.
    """
    side = max(height, width)
    order = 1
    while (1 << order) < side:
        order += 1
    curve = rotate(build_curve(order), direction)
    return fit_to_shape(curve, height, width, direction=direction)


def serialize(x: Tensor, order: ScanOrder) -> Tensor:
    """Gather a [C,H,W] map into a [C,L] sequence along the scan order."""
    if x.ndim != 3 or x.shape[1] != order.height or x.shape[2] != order.width:
        raise ShapeError(
            f"serialize expects [C,{order.height},{order.width}], got {x.shape}")
    c = x.shape[0]
    flat = reshape(x, (c, order.height * order.width))
    return take(flat, order.flat_indices(), axis=1)


def deserialize(y: Tensor, order: ScanOrder) -> Tensor:
    """Exact inverse of serialize with the same order: [C,L] -> [C,H,W]."""
    length = order.height * order.width
    if y.ndim != 2 or y.shape[1] != length:
        raise ShapeError(f"deserialize expects [C,{length}], got {y.shape}")
    inverse = [0] * length
    for pos, flat_idx in enumerate(order.flat_indices()):
        inverse[flat_idx] = pos
    gathered = take(y, inverse, axis=1)
    return reshape(gathered, (y.shape[0], order.height, order.width))
