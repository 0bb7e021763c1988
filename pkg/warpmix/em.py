from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional, Union

import numpy as np
import numpy.typing as npt
from scipy.optimize import brentq
from tqdm import tqdm

from .config import ModelConfig, validate_config
from .constants import (
    INIT_ADVANCE_MASS,
    INIT_STAY_MASS,
    OBJECTIVE_DECREASE_WARNING,
    STEP_UPDATE_MAX_ROUNDS,
    STEP_UPDATE_TOLERANCE,
)
from .curves import Curve, CurveSet
from .inference import build_lattice
from .model import WarpMixtureModel

logger = logging.getLogger(__name__)

MONOTONE_TOLERANCE = 1e-8


class DataSummary(NamedTuple):
    global_mean: npt.NDArray[np.float64]
    global_variance: npt.NDArray[np.float64]
    variance_floor: npt.NDArray[np.float64]


def summarize_data(data: CurveSet, cfg: ModelConfig) -> DataSummary:
    mean = data.global_mean()
    variance = data.global_variance()
    # constant dimensions have no scale to take a fraction of
    floor = np.where(variance > 0, cfg.variance_floor_frac * variance, cfg.variance_floor_frac)
    return DataSummary(mean, variance, floor)


@dataclass
class SufficientStats:
    comp_weight: npt.NDArray[np.float64]
    init_counts: npt.NDArray[np.float64]
    # (K, T, S + 2) expected step counts keyed by origin position
    step_counts: npt.NDArray[np.float64]
    mean_num: npt.NDArray[np.float64]
    mean_den: npt.NDArray[np.float64]
    # weighted squared residuals around the means of the model used in the E-step
    var_num: npt.NDArray[np.float64]
    loglik: float = 0.0
    n_curves: int = 0

    @staticmethod
    def zeros(model: WarpMixtureModel) -> SufficientStats:
        k, m, t, d, n = model.k, model.m, model.t, model.d, model.n_steps
        return SufficientStats(
            comp_weight=np.zeros(k),
            init_counts=np.zeros((k, m)),
            step_counts=np.zeros((k, t, n)),
            mean_num=np.zeros((k, t, d)),
            mean_den=np.zeros((k, t)),
            var_num=np.zeros((k, t, d)),
        )

    def __add__(self, other: SufficientStats) -> SufficientStats:
        return SufficientStats(
            comp_weight=self.comp_weight + other.comp_weight,
            init_counts=self.init_counts + other.init_counts,
            step_counts=self.step_counts + other.step_counts,
            mean_num=self.mean_num + other.mean_num,
            mean_den=self.mean_den + other.mean_den,
            var_num=self.var_num + other.var_num,
            loglik=self.loglik + other.loglik,
            n_curves=self.n_curves + other.n_curves,
        )


@dataclass
class FitResult:
    model: WarpMixtureModel
    config: ModelConfig
    objective_trace: list[float]
    iterations: int
    converged: bool
    seed: Optional[int] = None
    decreases: list[int] = field(default_factory=list)
    # (component, lag) of every accepted origin translation
    translations: list[tuple[int, int]] = field(default_factory=list)

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]


def initial_step_distribution(cfg: ModelConfig) -> npt.NDArray[np.float64]:
    probs = np.zeros(cfg.n_steps)
    probs[1] = INIT_ADVANCE_MASS
    if cfg.allow_stay:
        probs[0] = INIT_STAY_MASS
    if cfg.max_skip > 0:
        probs[2:] = (1.0 - probs.sum()) / cfg.max_skip
    return probs / probs.sum()


def init_from_random_curves(
    data: CurveSet, cfg: ModelConfig, rng: np.random.Generator
) -> WarpMixtureModel:
    """Seed each component mean with a randomly chosen curve.

    The chosen curves, centered on their own mean when offsets are enabled,
    are written onto the grid from start ceil(M / 2) on the 1-based grid.
    Every other position holds the global data mean.
    """
    if len(data) < cfg.k:
        raise ValueError(f"cannot seed {cfg.k} components from {len(data)} curves")
    if cfg.grid_len is None:
        cfg = validate_config(cfg, data)
    summary = summarize_data(data, cfg)

    chosen = rng.choice(len(data), size=cfg.k, replace=False)
    start = math.ceil(cfg.max_shift / 2) - 1
    means = np.tile(summary.global_mean, (cfg.k, cfg.grid_len, 1))
    for k, index in enumerate(chosen):
        points = data[int(index)].points
        if cfg.offsets_enabled:
            points = points - points.mean(axis=0)
        means[k, start : start + len(points)] = points
    logger.debug(f"Seeded components from curves {chosen.tolist()} at grid position {start}")

    variances = np.tile(
        np.maximum(summary.global_variance, summary.variance_floor), (cfg.k, cfg.grid_len, 1)
    )
    steps = np.tile(initial_step_distribution(cfg), (cfg.k, 1))
    if not cfg.tie_transitions:
        steps = np.tile(steps[:, None, :], (1, cfg.grid_len, 1))
    return WarpMixtureModel(
        weights=np.full(cfg.k, 1.0 / cfg.k),
        init=np.full((cfg.k, cfg.max_shift), 1.0 / cfg.max_shift),
        steps=steps,
        means=means,
        variances=variances,
        allow_stay=cfg.allow_stay,
        offsets_enabled=cfg.offsets_enabled,
        tie_transitions=cfg.tie_transitions,
    )


def step_support(model: WarpMixtureModel) -> npt.NDArray[np.bool_]:
    """Cells of the step table that can carry probability."""
    if model.tie_transitions:
        support = np.ones(model.n_steps, dtype=bool)
        support[0] = model.allow_stay
        return np.broadcast_to(support, model.steps.shape)
    return np.broadcast_to(model.feasible_steps(), model.steps.shape)


def log_prior(model: WarpMixtureModel, alpha: float) -> float:
    """Dirichlet log prior mass of the probability tables, up to a constant."""
    if alpha == 0:
        return 0.0
    support = step_support(model)
    with np.errstate(divide="ignore"):
        total = np.sum(np.log(model.weights)) + np.sum(np.log(model.init))
        total += np.sum(np.log(model.steps[support]))
    return float(alpha * total)


def curve_stats(curve: Curve, model: WarpMixtureModel) -> SufficientStats:
    """Expected sufficient statistics contributed by one curve."""
    stats = SufficientStats.zeros(model)
    lattice = build_lattice(curve, model)
    weights = lattice.cutset
    k, t = model.k, model.t

    stats.loglik = lattice.log_evidence
    stats.n_curves = 1
    stats.comp_weight += weights.sum(axis=1)
    stats.init_counts += weights
    stats.step_counts += np.einsum("km,kmtn->ktn", weights, lattice.expected_steps)

    occupancy = weights[:, :, None, None] * lattice.gamma
    flat = (np.arange(k)[:, None, None, None] * t + lattice.clipped[None]).ravel()
    stats.mean_den += np.bincount(flat, weights=occupancy.ravel(), minlength=k * t).reshape(k, t)

    old_means = model.means[:, lattice.clipped, :]
    for d in range(model.d):
        x = np.broadcast_to(lattice.translated[:, :, :, None, d], occupancy.shape)
        stats.mean_num[:, :, d] += np.bincount(
            flat, weights=(occupancy * x).ravel(), minlength=k * t
        ).reshape(k, t)
        residual = x - old_means[..., d]
        stats.var_num[:, :, d] += np.bincount(
            flat, weights=(occupancy * residual**2).ravel(), minlength=k * t
        ).reshape(k, t)
    return stats


def e_step(
    data: CurveSet, model: WarpMixtureModel, cfg: ModelConfig
) -> tuple[SufficientStats, float]:
    """Expected sufficient statistics and the MAP objective of `model`.

    Per-curve statistics are merged in curve order, so the totals do not
    depend on how the curves were scheduled.
    """
    stats = SufficientStats.zeros(model)
    for curve in data:
        stats = stats + curve_stats(curve, model)
    objective = stats.loglik + log_prior(model, cfg.dirichlet_alpha)
    return stats, objective


def _normalize(
    counts: npt.NDArray[np.float64],
    previous: npt.NDArray[np.float64],
    support: Optional[npt.NDArray[np.bool_]] = None,
) -> npt.NDArray[np.float64]:
    if support is not None:
        counts = np.where(support, counts, 0.0)
    total = counts.sum(axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        probs = counts / total
    # rows without any mass keep their previous distribution
    return np.where(total > 0, probs, previous)


def _weighted_simplex_point(
    a: npt.NDArray[np.float64], b: npt.NDArray[np.float64]
) -> npt.NDArray[np.float64]:
    """Maximize sum a log p - sum b p over the simplex, a >= 0 and b >= 0."""
    active = a > 0
    lowest = np.min(b[active])
    excess = np.where(active, b - lowest, 0.0)

    def mass(scale: float) -> float:
        return float(np.sum(a[active] / (excess[active] + scale))) - 1.0

    # mass(a[argmin b]) >= 0 and mass(sum a) <= 0
    low = float(a[active][np.argmin(b[active])])
    high = float(a.sum())
    scale = low if mass(low) <= 0 else brentq(mass, low, high, xtol=1e-15, rtol=1e-15)
    p = np.where(active, a / (excess + scale), 0.0)
    return p / p.sum()


def tied_step_update(
    counts: npt.NDArray[np.float64],
    alpha: float,
    previous: npt.NDArray[np.float64],
    feasible: npt.NDArray[np.bool_],
    support: npt.NDArray[np.bool_],
) -> npt.NDArray[np.float64]:
    """MAP step distribution of one component under grid-end renormalization.

    Args:
        counts: (T, S + 2) expected step counts keyed by origin position.
        alpha: Dirichlet pseudo-count added to every supported cell.
        previous: (S + 2,) step distribution used in the E-step.
        feasible: (T, S + 2) moves that stay on the grid.
        support: (S + 2,) cells that may carry probability.

    Returns:
        The distribution maximizing sum_o (c_o + alpha) log p_o minus
        sum_t n_t log (sum over feasible o of p_o). Positions whose moves are
        all feasible reduce this to the usual counts + alpha closed form; the
        others are handled by minorize-maximize rounds started from `previous`,
        each of which can only raise the objective.
    """
    a = np.where(support, counts.sum(axis=0) + alpha, 0.0)
    if a.sum() <= 0:
        return previous
    exits = counts.sum(axis=1)
    rows = feasible & support
    clipped = (exits > 0) & ~np.all(rows == support, axis=1)
    if not clipped.any():
        return a / a.sum()

    exits, rows = exits[clipped], rows[clipped].astype(np.float64)
    p = previous.copy()
    for _ in range(STEP_UPDATE_MAX_ROUNDS):
        # tangent of -n_t log Z_t at the current point; unclipped rows have Z_t = 1
        b = (exits / (rows @ p)) @ rows
        updated = _weighted_simplex_point(a, b)
        done = np.max(np.abs(updated - p)) < STEP_UPDATE_TOLERANCE
        p = updated
        if done:
            break
    return p


def m_step(
    stats: SufficientStats,
    cfg: ModelConfig,
    summary: DataSummary,
    previous: WarpMixtureModel,
) -> WarpMixtureModel:
    alpha = cfg.dirichlet_alpha
    weights = _normalize(stats.comp_weight + alpha, previous.weights)
    init = _normalize(stats.init_counts + alpha, previous.init)

    support = step_support(previous)
    if previous.tie_transitions:
        feasible = previous.feasible_steps()
        steps = np.stack(
            [
                tied_step_update(
                    stats.step_counts[k], alpha, previous.steps[k], feasible, support[k]
                )
                for k in range(previous.k)
            ]
        )
    else:
        steps = _normalize(stats.step_counts + alpha, previous.steps, support)
        # grid-end rows with no legal move keep a nominal advance
        empty = ~support.any(axis=-1)
        steps[empty] = 0.0
        steps[..., 1][empty] = 1.0

    # sparsely occupied positions keep their mean; unvisited ones drop to the floor
    den = stats.mean_den[..., None]
    occupied = den > cfg.occupancy_threshold
    with np.errstate(divide="ignore", invalid="ignore"):
        means = np.where(occupied, stats.mean_num / den, previous.means)
        shift = means - previous.means
        variances = np.where(den > 0, stats.var_num / den - shift**2, 0.0)
    variances = np.maximum(variances, summary.variance_floor)

    return WarpMixtureModel(
        weights=weights,
        init=init,
        steps=steps,
        means=means,
        variances=variances,
        allow_stay=previous.allow_stay,
        offsets_enabled=previous.offsets_enabled,
        tie_transitions=previous.tie_transitions,
    )


def translate_component(model: WarpMixtureModel, k: int, lag: int) -> WarpMixtureModel:
    """Move component k's template `lag` positions later on the grid.

    Positions and starts pushed past either edge repeat the edge value; the
    start distribution is renormalized afterwards.
    """
    positions = np.clip(np.arange(model.t) - lag, 0, model.t - 1)
    starts = np.clip(np.arange(model.m) - lag, 0, model.m - 1)
    means = model.means.copy()
    variances = model.variances.copy()
    init = model.init.copy()
    steps = model.steps.copy()
    means[k] = model.means[k, positions]
    variances[k] = model.variances[k, positions]
    row = model.init[k, starts]
    init[k] = row / row.sum() if row.sum() > 0 else np.full(model.m, 1.0 / model.m)
    if not model.tie_transitions:
        steps[k] = model.steps[k, positions]
    return replace(model, means=means, variances=variances, init=init, steps=steps)


def search_origins(
    data: CurveSet,
    model: WarpMixtureModel,
    cfg: ModelConfig,
    summary: DataSummary,
    objective: float,
) -> Optional[tuple[WarpMixtureModel, SufficientStats, float, tuple[int, int]]]:
    """Best one-position translation of a single component, if it beats `objective`.

    EM cannot move a template along the grid once curves have settled on
    their starts, so every candidate is refit by one EM step before it is
    compared with the current model.
    """
    best = None
    for k in range(model.k):
        for lag in (-1, 1):
            candidate = translate_component(model, k, lag)
            stats, _ = e_step(data, candidate, cfg)
            refit = m_step(stats, cfg, summary, candidate)
            stats, value = e_step(data, refit, cfg)
            logger.debug(f"origin lag {lag:+d} on component {k}: objective {value:.6f}")
            if best is None or value > best[2]:
                best = (refit, stats, value, (k, lag))
    if best is None:
        return None
    gain = best[2] - objective
    if gain <= cfg.tol * max(abs(objective), np.finfo(float).tiny):
        return None
    return best


def fit(
    data: CurveSet,
    cfg: ModelConfig,
    rng: Union[np.random.Generator, int, None] = None,
    init_model: Optional[WarpMixtureModel] = None,
) -> FitResult:
    """MAP-EM from a random-curve initialization until the objective settles.

    Args:
        data: Curves to fit.
        cfg: Model configuration; validated against `data` first.
        rng (optional): Generator or integer seed for the initialization.
        init_model (optional): Starting parameters instead of random curves.

    Returns:
        The fitted model with its objective trace. With `cfg.origin_search`,
        a converged run also tries shifting each component along the grid and
        resumes EM whenever a shift raises the objective.
    """
    cfg = validate_config(cfg, data)
    generator, seed = _as_generator(rng)
    summary = summarize_data(data, cfg)
    model = init_model if init_model is not None else init_from_random_curves(data, cfg, generator)

    stats, objective = e_step(data, model, cfg)
    trace = [objective]
    decreases = []
    translations = []
    converged = False
    iterations = 0
    while iterations < cfg.max_iters:
        iterations += 1
        model = m_step(stats, cfg, summary, model)
        stats, objective = e_step(data, model, cfg)
        previous = trace[-1]
        trace.append(objective)
        logger.debug(f"iteration {iterations}: objective {objective:.6f}")

        drop = previous - objective
        limit = OBJECTIVE_DECREASE_WARNING if cfg.offsets_enabled else MONOTONE_TOLERANCE
        if drop > limit:
            decreases.append(iterations)
            logger.warning(
                f"objective decreased by {drop:.3e} at iteration {iterations} "
                f"({previous:.6f} -> {objective:.6f})"
            )

        change = abs(objective - previous) / max(abs(previous), np.finfo(float).tiny)
        if change < cfg.tol:
            budget = cfg.k * (cfg.max_shift - 1)
            if cfg.origin_search and cfg.max_shift > 1 and len(translations) < budget:
                moved = search_origins(data, model, cfg, summary, objective)
                if moved is not None:
                    model, stats, objective, move = moved
                    trace.append(objective)
                    translations.append(move)
                    logger.info(
                        f"shifted component {move[0]} by {move[1]:+d}, "
                        f"objective {objective:.6f}"
                    )
                    continue
            converged = True
            break

    logger.info(
        f"EM finished after {iterations} iteration(s), objective {trace[-1]:.6f}, "
        f"converged={converged}"
    )
    return FitResult(
        model=model,
        config=cfg,
        objective_trace=trace,
        iterations=iterations,
        converged=converged,
        seed=seed,
        decreases=decreases,
        translations=translations,
    )


def _as_generator(
    rng: Union[np.random.Generator, int, None]
) -> tuple[np.random.Generator, Optional[int]]:
    if isinstance(rng, np.random.Generator):
        return rng, None
    return np.random.default_rng(rng), rng


def derive_seeds(seed: int, n_starts: int) -> list[int]:
    """The first start reuses `seed`; the others are spawned from it."""
    extra = np.random.SeedSequence(seed).generate_state(max(n_starts - 1, 0))
    return [seed] + [int(value) for value in extra]


def fit_multi_start(
    data: CurveSet,
    cfg: ModelConfig,
    n_starts: int,
    seed: int,
    progress: bool = False,
) -> FitResult:
    """Best of `n_starts` EM runs by final objective; earlier starts win ties."""
    if n_starts < 1:
        raise ValueError(f"n_starts must be >= 1, got {n_starts}")
    seeds = derive_seeds(seed, n_starts)
    best: Optional[FitResult] = None
    for start_seed in tqdm(seeds, desc="EM starts", disable=not progress):
        result = fit(data, cfg, start_seed)
        logger.debug(f"start seed {start_seed}: objective {result.objective:.6f}")
        if best is None or result.objective > best.objective:
            best = result
    logger.info(f"Best of {n_starts} start(s): seed {best.seed}, objective {best.objective:.6f}")
    return best
