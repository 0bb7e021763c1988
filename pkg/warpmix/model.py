from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Sequence

import numpy as np
import numpy.typing as npt

logger = logging.getLogger(__name__)

SIMPLEX_TOLERANCE = 1e-8


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class WarpMixtureModel:
    """Mixture of time-warped, shifted curve templates on a discrete grid.

    Shapes, with K components, M starts, T grid positions, D dimensions and
    S + 2 step offsets (0 stay, 1 advance, 2..S+1 skips):

        weights    (K,)
        init       (K, M)
        steps      (K, S + 2) when tied, else (K, T, S + 2)
        means      (K, T, D)
        variances  (K, T, D)
    """

    weights: npt.NDArray[np.float64]
    init: npt.NDArray[np.float64]
    steps: npt.NDArray[np.float64]
    means: npt.NDArray[np.float64]
    variances: npt.NDArray[np.float64]
    allow_stay: bool = False
    offsets_enabled: bool = False
    tie_transitions: bool = True

    def __post_init__(self):
        for name in ("weights", "init", "steps", "means", "variances"):
            array = np.array(getattr(self, name), dtype=np.float64)
            array.setflags(write=False)
            object.__setattr__(self, name, array)

    @property
    def k(self) -> int:
        return self.weights.shape[0]

    @property
    def m(self) -> int:
        return self.init.shape[1]

    @property
    def t(self) -> int:
        return self.means.shape[1]

    @property
    def d(self) -> int:
        return self.means.shape[2]

    @property
    def s(self) -> int:
        return self.steps.shape[-1] - 2

    @property
    def n_steps(self) -> int:
        return self.steps.shape[-1]

    @property
    def min_step(self) -> int:
        return 0 if self.allow_stay else 1

    def step_table(self) -> npt.NDArray[np.float64]:
        """Raw step probabilities broadcast to (K, T, S + 2)."""
        if self.tie_transitions:
            return np.broadcast_to(self.steps[:, None, :], (self.k, self.t, self.n_steps))
        return self.steps

    def feasible_steps(self) -> npt.NDArray[np.bool_]:
        """(T, S + 2) mask of offsets that stay on the grid and are permitted."""
        positions = np.arange(self.t)[:, None]
        offsets = np.arange(self.n_steps)[None, :]
        feasible = positions + offsets <= self.t - 1
        if not self.allow_stay:
            feasible[:, 0] = False
        return feasible

    @cached_property
    def log_transitions(self) -> npt.NDArray[np.float64]:
        """(K, T, S + 2) log step probabilities, renormalized at the grid end."""
        feasible = self.feasible_steps()[None, :, :]
        probs = np.where(feasible, self.step_table(), 0.0)
        total = probs.sum(axis=-1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            log_probs = np.log(probs) - np.log(total)
        log_probs = np.where((probs > 0) & (total > 0), log_probs, -np.inf)
        log_probs.setflags(write=False)
        return log_probs

    @cached_property
    def log_weights(self) -> npt.NDArray[np.float64]:
        with np.errstate(divide="ignore"):
            return np.log(self.weights)

    @cached_property
    def log_init(self) -> npt.NDArray[np.float64]:
        with np.errstate(divide="ignore"):
            return np.log(self.init)

    def check_invariants(self, variance_floor: npt.ArrayLike | None = None) -> None:
        problems = []
        k, t, d = self.means.shape
        if self.weights.shape != (k,):
            problems.append(f"weights shape {self.weights.shape} != ({k},)")
        if self.init.ndim != 2 or self.init.shape[0] != k:
            problems.append(f"init shape {self.init.shape} does not have {k} rows")
        if self.variances.shape != self.means.shape:
            problems.append(
                f"variances shape {self.variances.shape} != means shape {self.means.shape}"
            )
        expected_steps = 2 if self.tie_transitions else 3
        if self.steps.ndim != expected_steps or self.steps.shape[0] != k:
            problems.append(f"steps shape {self.steps.shape} is not a valid step table")
        elif not self.tie_transitions and self.steps.shape[1] != t:
            problems.append(f"untied steps have {self.steps.shape[1]} rows, grid has {t}")
        if problems:
            raise ModelFormatError("; ".join(problems))

        for name in ("weights", "init", "steps", "means", "variances"):
            if not np.all(np.isfinite(getattr(self, name))):
                problems.append(f"{name} contains non-finite values")
        for name in ("weights", "init", "steps"):
            if np.any(getattr(self, name) < 0):
                problems.append(f"{name} contains negative probabilities")
        if abs(self.weights.sum() - 1.0) > SIMPLEX_TOLERANCE:
            problems.append(f"weights sum to {self.weights.sum()!r}, not 1")
        bad_rows = np.flatnonzero(np.abs(self.init.sum(axis=1) - 1.0) > SIMPLEX_TOLERANCE)
        if bad_rows.size:
            problems.append(f"init rows {bad_rows.tolist()} do not sum to 1")
        step_sums = self.steps.sum(axis=-1)
        if np.any(np.abs(step_sums - 1.0) > SIMPLEX_TOLERANCE):
            problems.append("step distributions do not sum to 1")
        if not self.allow_stay and np.any(self.steps[..., 0] != 0):
            problems.append("stay probability is non-zero while stays are disabled")
        if np.any(self.variances <= 0):
            problems.append("variances must be positive")
        if variance_floor is not None:
            floor = np.asarray(variance_floor, dtype=np.float64)
            if np.any(self.variances < floor):
                problems.append("variances fall below the variance floor")
        if problems:
            raise ModelFormatError("; ".join(problems))


def permute_components(model: WarpMixtureModel, order: Sequence[int]) -> WarpMixtureModel:
    """Relabel components so that new component i is old component order[i]."""
    order = np.asarray(order, dtype=np.intp)
    if sorted(order.tolist()) != list(range(model.k)):
        raise ValueError(f"{order.tolist()} is not a permutation of {model.k} components")
    return replace(
        model,
        weights=model.weights[order],
        init=model.init[order],
        steps=model.steps[order],
        means=model.means[order],
        variances=model.variances[order],
    )
