from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
import numpy.typing as npt

from .constants import AnchorMode


@dataclass(frozen=True)
class Curve:
    """A variable-length sequence of D-dimensional measurements on the grid."""

    id: str
    points: npt.NDArray[np.float64]

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64)
        if points.ndim == 1:
            points = points[:, None]
        if points.ndim != 2 or points.shape[0] < 1 or points.shape[1] < 1:
            raise ValueError(
                f"Curve {self.id!r} must be a non-empty (L, D) array, got shape {points.shape}"
            )
        if not np.all(np.isfinite(points)):
            raise ValueError(f"Curve {self.id!r} contains non-finite values")
        points.setflags(write=False)
        object.__setattr__(self, "points", points)

    @property
    def length(self) -> int:
        return self.points.shape[0]

    @property
    def dims(self) -> int:
        return self.points.shape[1]

    def translate(self, delta: npt.ArrayLike) -> Curve:
        return Curve(self.id, self.points + np.asarray(delta, dtype=np.float64))


@dataclass(frozen=True)
class CurveSet:
    curves: tuple[Curve, ...] = field(default_factory=tuple)

    def __post_init__(self):
        curves = tuple(self.curves)
        if curves:
            dims = {curve.dims for curve in curves}
            if len(dims) != 1:
                raise ValueError(f"Curves disagree on dimensionality: {sorted(dims)}")
        object.__setattr__(self, "curves", curves)

    def __len__(self) -> int:
        return len(self.curves)

    def __iter__(self) -> Iterator[Curve]:
        return iter(self.curves)

    def __getitem__(self, index: int) -> Curve:
        return self.curves[index]

    @property
    def dims(self) -> int:
        if not self.curves:
            return 0
        return self.curves[0].dims

    @property
    def l_max(self) -> int:
        return max((curve.length for curve in self.curves), default=0)

    @property
    def n_measurements(self) -> int:
        return sum(curve.length * curve.dims for curve in self.curves)

    def subset(self, indices: Sequence[int]) -> CurveSet:
        return CurveSet(tuple(self.curves[i] for i in indices))

    def stacked(self) -> npt.NDArray[np.float64]:
        """All observations of all curves as one (sum L, D) array."""
        return np.concatenate([curve.points for curve in self.curves], axis=0)

    def global_mean(self) -> npt.NDArray[np.float64]:
        return self.stacked().mean(axis=0)

    def global_variance(self) -> npt.NDArray[np.float64]:
        return self.stacked().var(axis=0)


def anchor_curves(data: CurveSet, mode: AnchorMode | str = AnchorMode.NONE) -> CurveSet:
    """Remove each curve's origin before modelling.

    `first` moves every curve to start at zero, `mean` centers it on its own
    per-dimension mean. Both are the fixed, model-free alternatives to the
    offset solved inside the mixture.
    """
    mode = AnchorMode(mode)
    if mode is AnchorMode.NONE:
        return data
    anchored = []
    for curve in data:
        if mode is AnchorMode.FIRST:
            origin = curve.points[0]
        else:
            origin = curve.points.mean(axis=0)
        anchored.append(curve.translate(-origin))
    return CurveSet(tuple(anchored))
