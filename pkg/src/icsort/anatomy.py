"""Synthetic brain slice geometry shared by the cohort generator and feature code.

Every synthetic slice sits on the same anatomical template: an elliptical
brain with two interior ventricle ellipses.  Intensity steps at the brain
boundary and at the ventricle walls are what the Sobel-based geometry
detection picks up, so the template doubles as the ground truth oracle for
those detectors.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

# Template intensity levels. The gaps (0 -> BRAIN, BRAIN -> VENTRICLE) set the
# Sobel step heights the edge detector must clear.
BRAIN_LEVEL = 0.55
VENTRICLE_LEVEL = 0.15

MIN_SLICE_DIM = 16


@dataclass(frozen=True)
class Ellipse:
    cy: float
    cx: float
    ry: float
    rx: float

    def mask(self, height: int, width: int) -> np.ndarray:
        yy, xx = np.mgrid[0:height, 0:width]
        return ((yy - self.cy) / self.ry) ** 2 + ((xx - self.cx) / self.rx) ** 2 <= 1.0

    def boundary_point(self, angle: float) -> tuple[float, float]:
        return self.cy + self.ry * np.sin(angle), self.cx + self.rx * np.cos(angle)


@dataclass(frozen=True)
class SliceGeometry:
    """Ellipse parameters of one template slice, in voxel units."""

    height: int
    width: int
    brain: Ellipse
    ventricles: tuple[Ellipse, ...]

    def template(self) -> np.ndarray:
        img = np.zeros((self.height, self.width), dtype=np.float64)
        img[self.brain.mask(self.height, self.width)] = BRAIN_LEVEL
        for v in self.ventricles:
            img[v.mask(self.height, self.width)] = VENTRICLE_LEVEL
        return img

    def ventricle_mask(self) -> np.ndarray:
        out = np.zeros((self.height, self.width), dtype=bool)
        for v in self.ventricles:
            out |= v.mask(self.height, self.width)
        return out


def slice_geometry(height: int, width: int, with_ventricles: bool = True) -> SliceGeometry:
    """Canonical template geometry for the given slice dimensions.

    Raises ConfigError below MIN_SLICE_DIM: smaller grids cannot hold the
    brain ellipse plus two resolvable ventricles.
    """
    from .errors import ConfigError

    if height < MIN_SLICE_DIM or width < MIN_SLICE_DIM:
        raise ConfigError(
            f"slice dims {height}x{width} too small; need at least "
            f"{MIN_SLICE_DIM}x{MIN_SLICE_DIM}"
        )
    cy, cx = height / 2.0, width / 2.0
    brain = Ellipse(cy, cx, 0.42 * height, 0.40 * width)
    ventricles: tuple[Ellipse, ...] = ()
    if with_ventricles:
        off = 0.14 * width
        ventricles = (
            Ellipse(cy, cx - off, 0.11 * height, 0.055 * width),
            Ellipse(cy, cx + off, 0.11 * height, 0.055 * width),
        )
    return SliceGeometry(height, width, brain, ventricles)


@lru_cache(maxsize=8)
def template_slice(height: int, width: int, with_ventricles: bool = True) -> np.ndarray:
    out = slice_geometry(height, width, with_ventricles).template()
    out.setflags(write=False)
    return out


def band_width(height: int, width: int) -> int:
    """White-matter band half-width: 2 voxels at 64x64 desk scale, scaled with dims."""
    return max(2, round(2 * min(height, width) / 64))
