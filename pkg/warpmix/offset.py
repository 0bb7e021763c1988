from __future__ import annotations

from typing import NamedTuple

import numpy as np
import numpy.typing as npt

from .curves import Curve
from .model import WarpMixtureModel


class GridOverrunError(ValueError):
    pass


class OffsetResult(NamedTuple):
    delta: npt.NDArray[np.float64]
    residual_ss: float


def mean_segments(curve: Curve, model: WarpMixtureModel) -> npt.NDArray[np.float64]:
    """(K, M, L, D) linear mean segments mu_k(g1 .. g1 + L - 1) for every start."""
    length = curve.length
    if model.m - 1 + length > model.t:
        raise GridOverrunError(
            f"curve {curve.id!r} of length {length} overruns the grid of {model.t} "
            f"positions from start {model.m - 1}"
        )
    index = np.arange(model.m)[:, None] + np.arange(length)[None, :]
    return model.means[:, index, :]


def offset_table(curve: Curve, model: WarpMixtureModel) -> npt.NDArray[np.float64]:
    """(K, M, D) optimal offsets for every (component, start) pair."""
    if not model.offsets_enabled:
        return np.zeros((model.k, model.m, model.d))
    segments = mean_segments(curve, model)
    return (curve.points[None, None, :, :] - segments).mean(axis=2)


def optimal_offset(
    curve: Curve, model: WarpMixtureModel, k: int, g1: int
) -> OffsetResult:
    """Euclidean best translation of the curve onto the linear mean segment from g1.

    Observation j is paired with grid position g1 + j; skips and stays along
    the actual path are ignored.
    """
    length = curve.length
    if g1 < 0 or g1 + length > model.t:
        raise GridOverrunError(
            f"segment {g1}..{g1 + length - 1} of curve {curve.id!r} leaves the grid "
            f"of {model.t} positions"
        )
    segment = model.means[k, g1 : g1 + length, :]
    diff = curve.points - segment
    if model.offsets_enabled:
        delta = diff.mean(axis=0)
    else:
        delta = np.zeros(model.d)
    residual_ss = float(np.sum((diff - delta) ** 2))
    return OffsetResult(delta, residual_ss)
