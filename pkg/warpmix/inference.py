"""
Exact inference for the warped curve mixture.

Conditioning on the component Z and the first grid position G1 turns the
model into a left-to-right chain over grid positions, so every quantity here
is computed by running chain recursions for all (k, g1) pairs at once and
combining them with the cut-set weights alpha_k * P(g1 | k).

The chain is evaluated in "band" coordinates: at observation j a path from g1
can only sit at grid positions g1 + j * m + b with m the smallest step (0 with
stays, 1 without) and 0 <= b <= j * (S + 1 - m). Linear models have a band of
width one, which keeps them linear in the curve length.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np
import numpy.typing as npt
from scipy.special import logsumexp

from .constants import DEFAULT_ENUMERATION_LIMIT
from .curves import Curve
from .model import WarpMixtureModel
from .offset import GridOverrunError, offset_table

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)


class EnumerationLimitError(RuntimeError):
    pass


class CutsetPosterior(NamedTuple):
    # (K, M) posterior P(Z = k, G1 = g1 | Y)
    table: npt.NDArray[np.float64]
    log_evidence: float


class Occupancies(NamedTuple):
    # (L, T) state occupancy posteriors given (k, g1)
    gamma: npt.NDArray[np.float64]
    # expected step-offset counts: (S + 2,) when tied, (T, S + 2) otherwise
    xi: npt.NDArray[np.float64]


class Alignment(NamedTuple):
    curve_id: str
    component: int
    start: int
    path: tuple[int, ...]
    offset: npt.NDArray[np.float64]
    log_joint: float


def emission_logdensity(
    y: npt.ArrayLike, mean: npt.ArrayLike, var: npt.ArrayLike
) -> float:
    """Diagonal Gaussian log density of one D-dimensional observation."""
    y = np.asarray(y, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(mean)) and np.all(np.isfinite(var))):
        raise ValueError("emission inputs must be finite")
    if np.any(var <= 0):
        raise ValueError(f"emission variances must be positive, got {var}")
    return float(np.sum(-0.5 * (LOG_2PI + np.log(var)) - (y - mean) ** 2 / (2.0 * var)))


def _shift_right(a: npt.NDArray[np.float64], s: int) -> npt.NDArray[np.float64]:
    if s == 0:
        return a
    out = np.full_like(a, -np.inf)
    if s < a.shape[-1]:
        out[..., s:] = a[..., : a.shape[-1] - s]
    return out


def _shift_left(a: npt.NDArray[np.float64], s: int) -> npt.NDArray[np.float64]:
    if s == 0:
        return a
    out = np.full_like(a, -np.inf)
    if s < a.shape[-1]:
        out[..., : a.shape[-1] - s] = a[..., s:]
    return out


def _logsumexp(a: npt.NDArray[np.float64], axis: int) -> npt.NDArray[np.float64]:
    with np.errstate(divide="ignore", invalid="ignore"):
        return logsumexp(a, axis=axis)


@dataclass(frozen=True, eq=False)
class CurveLattice:
    """Forward/backward lattice of one curve for every (component, start) pair.

    Arrays are indexed [k, g1, j, b] with the band offset b described in the
    module docstring; `positions[g1, j, b]` maps back to the grid.
    """

    curve: Curve
    model: WarpMixtureModel

    @property
    def length(self) -> int:
        return self.curve.length

    @property
    def width(self) -> int:
        spread = self.model.n_steps - 1 - self.model.min_step
        return (self.length - 1) * spread + 1

    @cached_property
    def positions(self) -> npt.NDArray[np.intp]:
        starts = np.arange(self.model.m)[:, None, None]
        steps = np.arange(self.length)[None, :, None]
        band = np.arange(self.width)[None, None, :]
        return starts + steps * self.model.min_step + band

    @cached_property
    def valid(self) -> npt.NDArray[np.bool_]:
        spread = self.model.n_steps - 1 - self.model.min_step
        steps = np.arange(self.length)[None, :, None]
        band = np.arange(self.width)[None, None, :]
        return (band <= steps * spread) & (self.positions <= self.model.t - 1)

    @cached_property
    def clipped(self) -> npt.NDArray[np.intp]:
        return np.minimum(self.positions, self.model.t - 1)

    @cached_property
    def deltas(self) -> npt.NDArray[np.float64]:
        # (K, M, D)
        return offset_table(self.curve, self.model)

    @cached_property
    def translated(self) -> npt.NDArray[np.float64]:
        # (K, M, L, D) observations with the per-(k, g1) offset removed
        return self.curve.points[None, None, :, :] - self.deltas[:, :, None, :]

    @cached_property
    def emissions(self) -> npt.NDArray[np.float64]:
        # (K, M, L, W)
        mu = self.model.means[:, self.clipped, :]
        var = self.model.variances[:, self.clipped, :]
        x = self.translated[:, :, :, None, :]
        log_density = np.sum(-0.5 * (LOG_2PI + np.log(var)) - (x - mu) ** 2 / (2.0 * var), axis=-1)
        return np.where(self.valid[None], log_density, -np.inf)

    def transitions_from(self, j: int) -> npt.NDArray[np.float64]:
        """(K, M, W, S + 2) log step probabilities out of the band at observation j."""
        return self.model.log_transitions[:, self.clipped[:, j, :], :]

    def _moves(self):
        for o in range(self.model.min_step, self.model.n_steps):
            yield o, o - self.model.min_step

    @cached_property
    def log_alpha(self) -> npt.NDArray[np.float64]:
        k, m = self.model.k, self.model.m
        alpha = np.full((k, m, self.length, self.width), -np.inf)
        alpha[:, :, 0, 0] = self.emissions[:, :, 0, 0]
        for j in range(1, self.length):
            a_prev = self.transitions_from(j - 1)
            terms = [
                _shift_right(alpha[:, :, j - 1, :] + a_prev[..., o], s)
                for o, s in self._moves()
            ]
            alpha[:, :, j, :] = _logsumexp(np.stack(terms, axis=-1), axis=-1)
            alpha[:, :, j, :] += self.emissions[:, :, j, :]
        return alpha

    @cached_property
    def log_beta(self) -> npt.NDArray[np.float64]:
        k, m = self.model.k, self.model.m
        beta = np.zeros((k, m, self.length, self.width))
        for j in range(self.length - 2, -1, -1):
            a_here = self.transitions_from(j)
            ahead = self.emissions[:, :, j + 1, :] + beta[:, :, j + 1, :]
            terms = [a_here[..., o] + _shift_left(ahead, s) for o, s in self._moves()]
            beta[:, :, j, :] = _logsumexp(np.stack(terms, axis=-1), axis=-1)
        return beta

    @cached_property
    def conditional_loglik(self) -> npt.NDArray[np.float64]:
        # (K, M) log P(Y | k, g1)
        return _logsumexp(self.log_alpha[:, :, -1, :], axis=-1)

    @cached_property
    def log_joint(self) -> npt.NDArray[np.float64]:
        # (K, M) log alpha_k + log P(g1 | k) + log P(Y | k, g1)
        with np.errstate(invalid="ignore"):
            return (
                self.model.log_weights[:, None]
                + self.model.log_init
                + self.conditional_loglik
            )

    @cached_property
    def log_evidence(self) -> float:
        return float(_logsumexp(self.log_joint.ravel(), axis=0))

    @cached_property
    def cutset(self) -> npt.NDArray[np.float64]:
        with np.errstate(invalid="ignore"):
            table = np.exp(self.log_joint - self.log_evidence)
        return np.nan_to_num(table, nan=0.0)

    def _finite_loglik(self) -> tuple[npt.NDArray[np.bool_], npt.NDArray[np.float64]]:
        finite = np.isfinite(self.conditional_loglik)
        return finite, np.where(finite, self.conditional_loglik, 0.0)

    @cached_property
    def gamma(self) -> npt.NDArray[np.float64]:
        # (K, M, L, W) occupancy posteriors given (k, g1)
        finite, loglik = self._finite_loglik()
        log_gamma = self.log_alpha + self.log_beta - loglik[:, :, None, None]
        gamma = np.exp(log_gamma)
        return np.where(finite[:, :, None, None], gamma, 0.0)

    @cached_property
    def expected_steps(self) -> npt.NDArray[np.float64]:
        """(K, M, T, S + 2) expected step counts keyed by origin position."""
        k, m, t, n = self.model.k, self.model.m, self.model.t, self.model.n_steps
        finite, loglik = self._finite_loglik()
        counts = np.zeros((k, m, t, n))
        pair = np.arange(k * m).reshape(k, m, 1) * t
        for j in range(1, self.length):
            a_prev = self.transitions_from(j - 1)
            ahead = self.emissions[:, :, j, :] + self.log_beta[:, :, j, :]
            flat = (pair + self.clipped[None, :, j - 1, :]).ravel()
            for o, s in self._moves():
                log_xi = (
                    self.log_alpha[:, :, j - 1, :]
                    + a_prev[..., o]
                    + _shift_left(ahead, s)
                    - loglik[:, :, None]
                )
                xi = np.where(finite[:, :, None], np.exp(log_xi), 0.0)
                counts[..., o] += np.bincount(
                    flat, weights=xi.ravel(), minlength=k * m * t
                ).reshape(k, m, t)
        return counts

    def grid_gamma(self, k: int, g1: int) -> npt.NDArray[np.float64]:
        """(L, T) occupancies of one (k, g1) pair on grid coordinates."""
        grid = np.zeros((self.length, self.model.t))
        valid = self.valid[g1]
        rows = np.broadcast_to(np.arange(self.length)[:, None], valid.shape)
        grid[rows[valid], self.positions[g1][valid]] = self.gamma[k, g1][valid]
        return grid


def build_lattice(curve: Curve, model: WarpMixtureModel) -> CurveLattice:
    if curve.dims != model.d:
        raise ValueError(f"curve {curve.id!r} has D={curve.dims}, model has D={model.d}")
    if model.m - 1 + curve.length > model.t:
        raise GridOverrunError(
            f"curve {curve.id!r} of length {curve.length} overruns the grid of {model.t} "
            f"positions from start {model.m - 1}"
        )
    return CurveLattice(curve, model)


def conditional_curve_loglik(
    curve: Curve, model: WarpMixtureModel, k: int, g1: int
) -> float:
    return float(build_lattice(curve, model).conditional_loglik[k, g1])


def forward_backward(
    curve: Curve, model: WarpMixtureModel, k: int, g1: int
) -> tuple[Occupancies, float]:
    lattice = build_lattice(curve, model)
    steps = lattice.expected_steps[k, g1]
    xi = steps.sum(axis=0) if model.tie_transitions else steps
    return Occupancies(lattice.grid_gamma(k, g1), xi), float(lattice.conditional_loglik[k, g1])


def cutset_posterior(curve: Curve, model: WarpMixtureModel) -> CutsetPosterior:
    lattice = build_lattice(curve, model)
    return CutsetPosterior(lattice.cutset, lattice.log_evidence)


def curve_loglik(curve: Curve, model: WarpMixtureModel) -> float:
    return build_lattice(curve, model).log_evidence


def component_posterior(curve: Curve, model: WarpMixtureModel) -> npt.NDArray[np.float64]:
    """P(Z = k | Y) for every component."""
    return cutset_posterior(curve, model).table.sum(axis=1)


def viterbi_align(curve: Curve, model: WarpMixtureModel) -> Alignment:
    """Most probable (component, start, path).

    Ties go to the smallest component, then the smallest start, then the
    lexicographically earliest path. The max-product recursion runs backwards
    so the path can be traced from its first position, always taking the
    smallest optimal step.
    """
    lattice = build_lattice(curve, model)
    length, width = lattice.length, lattice.width
    moves = list(lattice._moves())
    emissions = lattice.emissions
    value = np.full((model.k, model.m, length, width), -np.inf)
    value[:, :, -1, :] = emissions[:, :, -1, :]
    for j in range(length - 2, -1, -1):
        a_here = lattice.transitions_from(j)
        terms = [a_here[..., o] + _shift_left(value[:, :, j + 1, :], s) for o, s in moves]
        value[:, :, j, :] = emissions[:, :, j, :] + np.max(np.stack(terms, axis=-1), axis=-1)

    with np.errstate(invalid="ignore"):
        scores = model.log_weights[:, None] + model.log_init + value[:, :, 0, 0]
    flat = int(np.argmax(np.where(np.isnan(scores), -np.inf, scores)))
    k, g1 = divmod(flat, model.m)

    band = 0
    path = [g1]
    for j in range(length - 1):
        a_here = lattice.transitions_from(j)[k, g1, band]
        candidates = np.array(
            [
                a_here[o] + (value[k, g1, j + 1, band + s] if band + s < width else -np.inf)
                for o, s in moves
            ]
        )
        choice = int(np.argmax(candidates))
        o, s = moves[choice]
        band += s
        path.append(path[-1] + o)

    return Alignment(
        curve_id=curve.id,
        component=k,
        start=g1,
        path=tuple(path),
        offset=lattice.deltas[k, g1].copy(),
        log_joint=float(scores[k, g1]),
    )


class EnumerationResult(NamedTuple):
    log_evidence: float
    # (K, M)
    cutset: npt.NDArray[np.float64]
    # (K, M) log P(Y | k, g1)
    conditional_loglik: npt.NDArray[np.float64]
    # (K, M, L, T) occupancies given (k, g1)
    occupancy: npt.NDArray[np.float64]
    # (K, M, T, S + 2) expected step counts given (k, g1), keyed by origin
    steps: npt.NDArray[np.float64]


def enumerate_paths(
    curve: Curve, model: WarpMixtureModel, limit: int = DEFAULT_ENUMERATION_LIMIT
) -> EnumerationResult:
    """Exact posteriors by listing every legal (k, g1, path)."""
    length = curve.length
    offsets = list(range(model.min_step, model.n_steps))
    count = model.k * model.m * len(offsets) ** (length - 1)
    if count > limit:
        raise EnumerationLimitError(
            f"enumeration of {count} paths exceeds the limit of {limit}"
        )

    deltas = offset_table(curve, model)
    log_a = model.log_transitions
    k_count, m_count, t_count, n = model.k, model.m, model.t, model.n_steps
    cond = np.full((k_count, m_count), -np.inf)
    occupancy = np.zeros((k_count, m_count, length, t_count))
    steps = np.zeros((k_count, m_count, t_count, n))

    for k in range(k_count):
        for g1 in range(m_count):
            y = curve.points - deltas[k, g1]
            scored = []
            for moves in itertools.product(offsets, repeat=length - 1):
                path = [g1]
                for o in moves:
                    path.append(path[-1] + o)
                if path[-1] > t_count - 1:
                    continue
                logp = sum(log_a[k, path[i], o] for i, o in enumerate(moves))
                if not np.isfinite(logp):
                    continue
                logp += sum(
                    emission_logdensity(y[j], model.means[k, t], model.variances[k, t])
                    for j, t in enumerate(path)
                )
                scored.append((logp, path, moves))
            if not scored:
                continue
            total = float(logsumexp([logp for logp, _, _ in scored]))
            cond[k, g1] = total
            for logp, path, moves in scored:
                weight = np.exp(logp - total)
                for j, t in enumerate(path):
                    occupancy[k, g1, j, t] += weight
                for i, o in enumerate(moves):
                    steps[k, g1, path[i], o] += weight

    with np.errstate(divide="ignore", invalid="ignore"):
        joint = model.log_weights[:, None] + model.log_init + cond
    log_evidence = float(_logsumexp(joint.ravel(), axis=0))
    cutset = np.nan_to_num(np.exp(joint - log_evidence), nan=0.0)
    return EnumerationResult(log_evidence, cutset, cond, occupancy, steps)


def brute_force_loglik(
    curve: Curve, model: WarpMixtureModel, limit: int = DEFAULT_ENUMERATION_LIMIT
) -> float:
    return enumerate_paths(curve, model, limit).log_evidence
