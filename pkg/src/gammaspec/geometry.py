"""Pixel-array layout and its mapping onto the chip plane.

The chip lies in the z = 0 plane with its normal along +z and its centre at
the origin. Columns run along x, rows along y; row 1 sits at the most
negative y. Row and column indices are 1-based, matching the readout record.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class PixelKind(enum.IntEnum):
    ENERGY_RESOLVING = 0
    LOW_FLUX = 1
    ENERGY_CALIBRATING = 2
    UNPOPULATED = -1


@dataclass(frozen=True)
class ArrayGeometry:
    rows: int = 76
    cols: int = 110
    er_rows: tuple[int, int] = (1, 61)
    lf_rows: tuple[int, int] = (62, 66)
    ec_rows: tuple[int, int] = (72, 76)
    pixel_pitch_row: float = 18.0  # um, single-height pixels
    pixel_pitch_col: float = 26.0  # um
    lf_pitch_row: float = 36.0  # um, low-flux pixels are double height
    depletion_depth: float = 1.5  # um
    chip_size: tuple[float, float] = (3.0, 3.3)  # mm, (along rows, along columns)
    source_distance: float = 10.0  # mm
    # diode areas of the energy-calibrating rows, first EC row first
    ec_areas: tuple[float, ...] = (6.25, 5.76, 5.29, 4.84, 4.41)
    _row_edges: np.ndarray = field(init=False, repr=False, compare=False)
    _col_edges: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("geometry needs at least one row and one column")
        if self.rows > 127 or self.cols > 127:
            raise ValueError("row/column addresses are 7-bit")
        spans = [r for r in (self.er_rows, self.lf_rows, self.ec_rows) if r is not None]
        for lo, hi in spans:
            if not 1 <= lo <= hi <= self.rows:
                raise ValueError(f"row range {(lo, hi)} outside [1, {self.rows}]")
        for i, a in enumerate(spans):
            for b in spans[i + 1:]:
                if a[0] <= b[1] and b[0] <= a[1]:
                    raise ValueError("row ranges must be disjoint")
        if self.ec_rows is not None and len(self.ec_areas) != self.ec_rows[1] - self.ec_rows[0] + 1:
            raise ValueError("need one diode area per energy-calibrating row")
        if self.depletion_depth <= 0:
            raise ValueError("depletion_depth must be positive")
        if min(self.chip_size) <= 0:
            raise ValueError("chip_size must be positive")

        heights = np.array([self._row_height(r) for r in range(1, self.rows + 1)])
        if heights.sum() <= 0:
            raise ValueError("geometry has no populated rows")
        h_mm = self.chip_size[0]
        w_mm = self.chip_size[1]
        row_edges = np.concatenate([[0.0], np.cumsum(heights)]) / heights.sum() * h_mm - h_mm / 2
        col_edges = np.linspace(-w_mm / 2, w_mm / 2, self.cols + 1)
        object.__setattr__(self, "_row_edges", row_edges)
        object.__setattr__(self, "_col_edges", col_edges)

    def _row_height(self, row: int) -> float:
        kind = self.row_kind(row)
        if kind is PixelKind.UNPOPULATED:
            return 0.0
        if kind is PixelKind.LOW_FLUX:
            return self.lf_pitch_row
        return self.pixel_pitch_row

    def row_kind(self, row: int) -> PixelKind:
        for span, kind in ((self.er_rows, PixelKind.ENERGY_RESOLVING),
                           (self.lf_rows, PixelKind.LOW_FLUX),
                           (self.ec_rows, PixelKind.ENERGY_CALIBRATING)):
            if span is not None and span[0] <= row <= span[1]:
                return kind
        return PixelKind.UNPOPULATED

    def row_kinds(self) -> np.ndarray:
        """Kind code per row, index 0 is row 1."""
        return np.array([int(self.row_kind(r)) for r in range(1, self.rows + 1)])

    def ec_area(self, row: int) -> float:
        if self.row_kind(row) is not PixelKind.ENERGY_CALIBRATING:
            raise ValueError(f"row {row} is not an energy-calibrating row")
        return self.ec_areas[row - self.ec_rows[0]]

    @property
    def half_extent(self) -> tuple[float, float]:
        """Half-widths (x, y) of the sensitive area in mm."""
        return self.chip_size[1] / 2, self.chip_size[0] / 2

    @property
    def corners(self) -> np.ndarray:
        hx, hy = self.half_extent
        return np.array([[-hx, -hy], [hx, -hy], [hx, hy], [-hx, hy]])

    def pixel_at(self, x, y):
        """Map chip-plane coordinates (mm) to 1-based (row, col).

        Points outside the sensitive area map to (0, 0).
        """
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        hx, hy = self.half_extent
        inside = (np.abs(x) <= hx) & (np.abs(y) <= hy)
        col = np.clip(np.searchsorted(self._col_edges, x, side="right"), 1, self.cols)
        # zero-height rows share an edge with their neighbour; side="right" skips them
        row = np.clip(np.searchsorted(self._row_edges, y, side="right"), 1, self.rows)
        row = np.where(inside, row, 0)
        col = np.where(inside, col, 0)
        return row, col

    def populated_mask(self) -> np.ndarray:
        """Boolean (rows, cols) mask of pixels that exist."""
        kinds = self.row_kinds()
        return np.repeat((kinds != PixelKind.UNPOPULATED)[:, None], self.cols, axis=1)
