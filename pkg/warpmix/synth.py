from __future__ import annotations

import logging
from typing import NamedTuple, Optional, Sequence

import numpy as np
import numpy.typing as npt

from .constants import DEFAULT_OFFSET_SIGMA, TemplateShape
from .curves import Curve, CurveSet
from .model import WarpMixtureModel

logger = logging.getLogger(__name__)


class LatentRecord(NamedTuple):
    component: int
    start: int
    path: tuple[int, ...]
    offset: npt.NDArray[np.float64]


def sample_curve(
    model: WarpMixtureModel,
    length: int,
    rng: np.random.Generator,
    offset_sigma: float = DEFAULT_OFFSET_SIGMA,
    curve_id: str = "c0",
) -> tuple[Curve, LatentRecord]:
    if length < 1:
        raise ValueError(f"curve length must be >= 1, got {length}")
    k = int(rng.choice(model.k, p=model.weights))
    g1 = int(rng.choice(model.m, p=model.init[k]))
    path = [g1]
    for _ in range(length - 1):
        probs = np.exp(model.log_transitions[k, path[-1]])
        if probs.sum() <= 0:
            raise ValueError(
                f"no legal step out of grid position {path[-1]} for a curve of length {length}"
            )
        o = int(rng.choice(model.n_steps, p=probs / probs.sum()))
        path.append(path[-1] + o)

    positions = np.asarray(path)
    noise = rng.standard_normal((length, model.d)) * np.sqrt(model.variances[k, positions])
    points = model.means[k, positions] + noise
    delta = rng.standard_normal(model.d) * offset_sigma
    curve = Curve(curve_id, points + delta)
    return curve, LatentRecord(k, g1, tuple(path), delta)


def sample_dataset(
    model: WarpMixtureModel,
    n: int,
    length_range: tuple[int, int],
    rng: np.random.Generator,
    offset_sigma: float = DEFAULT_OFFSET_SIGMA,
) -> tuple[CurveSet, list[LatentRecord]]:
    """`n` independent curves with lengths uniform on [L_min, L_max]."""
    l_min, l_max = length_range
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not 1 <= l_min <= l_max:
        raise ValueError(f"invalid length range {length_range}")
    if model.m - 1 + l_max > model.t:
        raise ValueError(
            f"curves of length {l_max} do not fit a grid of {model.t} positions with "
            f"{model.m} starts"
        )
    width = len(str(n - 1))
    curves, latents = [], []
    for i in range(n):
        length = int(rng.integers(l_min, l_max + 1))
        curve, latent = sample_curve(model, length, rng, offset_sigma, f"c{i:0{width}d}")
        curves.append(curve)
        latents.append(latent)
    logger.debug(f"Sampled {n} curves with lengths in [{l_min}, {l_max}]")
    return CurveSet(tuple(curves)), latents


def _template(
    shape: TemplateShape, k: int, d: int, n_components: int, grid: npt.NDArray[np.float64]
) -> npt.NDArray[np.float64]:
    t = len(grid)
    if shape is TemplateShape.BUMP:
        width = t / (4.0 * (n_components + 1))
        center = t * (k + 1) / (n_components + 1) + d * width
        return np.exp(-((grid - center) ** 2) / (2.0 * width**2))
    if shape is TemplateShape.RAMP:
        slope = (k + 1) / n_components
        sign = -1.0 if d % 2 else 1.0
        return sign * slope * grid / max(t - 1, 1)
    phase = np.pi * d / 2.0
    return np.sin(2.0 * np.pi * (k + 1) * grid / t + phase)


def make_template_model(
    k: int,
    d: int,
    m: int,
    s: int,
    t: int,
    shape: TemplateShape | str = TemplateShape.BUMP,
    separation: float = 1.0,
    noise_var: float = 0.01,
    allow_stay: bool = False,
    offsets_enabled: bool = False,
    step_probs: Optional[Sequence[float]] = None,
) -> WarpMixtureModel:
    """Smooth, separable component means for simulation and tests.

    Means scale linearly with `separation`; tables are uniform over their
    support unless `step_probs` overrides the step distribution.
    """
    if min(k, d, m, t) < 1 or s < 0 or noise_var <= 0:
        raise ValueError(f"invalid template dimensions k={k} d={d} m={m} s={s} t={t}")
    if t < m:
        raise ValueError(f"grid of {t} positions cannot hold {m} starts")
    shape = TemplateShape(shape)
    grid = np.arange(t, dtype=np.float64)
    means = np.empty((k, t, d))
    for component in range(k):
        for dim in range(d):
            means[component, :, dim] = separation * _template(shape, component, dim, k, grid)

    n_steps = s + 2
    if step_probs is None:
        steps = np.ones(n_steps)
        if not allow_stay:
            steps[0] = 0.0
    else:
        steps = np.asarray(step_probs, dtype=np.float64)
        if steps.shape != (n_steps,):
            raise ValueError(f"step_probs must have {n_steps} entries, got {steps.shape}")
    steps = steps / steps.sum()

    return WarpMixtureModel(
        weights=np.full(k, 1.0 / k),
        init=np.full((k, m), 1.0 / m),
        steps=np.tile(steps, (k, 1)),
        means=means,
        variances=np.full((k, t, d), noise_var),
        allow_stay=allow_stay,
        offsets_enabled=offsets_enabled,
        tie_transitions=True,
    )
