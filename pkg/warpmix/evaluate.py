from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from typing import Iterable, Optional, Sequence

import numpy as np
import numpy.typing as npt
from scipy.optimize import linear_sum_assignment
from tqdm import tqdm

from .config import ModelConfig, validate_config
from .constants import DEFAULT_STARTS, Variant
from .curves import CurveSet
from .em import derive_seeds, fit_multi_start
from .inference import curve_loglik, viterbi_align
from .model import WarpMixtureModel

logger = logging.getLogger(__name__)


@dataclass
class CVReport:
    folds: int
    per_fold_logp: list[float]
    mean_logp: float
    config_label: str
    k: int
    within_stdev: Optional[float] = None

    def to_dict(self) -> dict[str, object]:
        return asdict(self)


def heldout_logp(model: WarpMixtureModel, data: CurveSet) -> float:
    """Average log density per held-out measurement (point x dimension)."""
    total = sum(curve_loglik(curve, model) for curve in data)
    return total / data.n_measurements


def within_cluster_stdev(model: WarpMixtureModel, data: CurveSet) -> float:
    """Pooled residual spread of curves around their Viterbi-aligned means."""
    squares = 0.0
    count = 0
    for curve in data:
        alignment = viterbi_align(curve, model)
        path = np.asarray(alignment.path)
        residual = curve.points - alignment.offset - model.means[alignment.component, path]
        squares += float(np.sum(residual**2))
        count += residual.size
    return float(np.sqrt(squares / count))


def fold_assignments(n: int, folds: int, seed: int) -> list[npt.NDArray[np.intp]]:
    """Seeded shuffle cut into contiguous test blocks."""
    order = np.random.default_rng(seed).permutation(n)
    return [np.sort(block) for block in np.array_split(order, folds)]


def variant_config(base: ModelConfig, variant: Variant | str) -> ModelConfig:
    """Map a named model family onto shift, skip and stay settings.

    The grid length is re-derived for each variant.
    """
    variant = Variant(variant)
    if variant is Variant.NONE:
        settings = dict(max_shift=1, max_skip=0, allow_stay=False)
    elif variant is Variant.SHIFT:
        settings = dict(max_shift=base.max_shift, max_skip=0, allow_stay=False)
    elif variant is Variant.WARP:
        settings = dict(max_shift=1, max_skip=base.max_skip, allow_stay=True)
    else:
        settings = dict(max_shift=base.max_shift, max_skip=base.max_skip, allow_stay=True)
    return replace(base, grid_len=None, **settings)


def _map(function, items: Sequence, workers: int, progress: bool, desc: str) -> list:
    # pool.map yields in submission order, so results match the sequential run
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = pool.map(function, items)
            return list(tqdm(results, total=len(items), desc=desc, disable=not progress))
    return [function(item) for item in tqdm(items, desc=desc, disable=not progress)]


def cross_validate(
    data: CurveSet,
    cfg: ModelConfig,
    folds: int,
    n_starts: int = DEFAULT_STARTS,
    seed: int = 0,
    label: str = "",
    progress: bool = False,
    workers: int = 1,
) -> CVReport:
    """
    K-fold held-out log density of `cfg` on seeded fold splits.

    Args:
        data (CurveSet): Curves to split; the grid is fixed on all of them.
        cfg (ModelConfig): Model family to fit on each training split.
        folds (int): Number of folds, between 2 and the number of curves.
        n_starts (int): EM restarts per fold.
        seed (int): Seeds the fold split and every fold's restarts.
        label (str): Variant name used in logs and the report.
        progress (bool): Show a progress bar over folds.
        workers (int): Folds fitted concurrently; results do not depend on it.

    Returns:
        CVReport: Per-fold and mean log density per held-out measurement.
    """
    if folds < 2:
        raise ValueError(f"cross-validation needs at least 2 folds, got {folds}")
    if len(data) < folds:
        raise ValueError(f"{len(data)} curves are too few for {folds} folds")
    # fix the grid on the full dataset so every held-out curve fits
    cfg = validate_config(cfg, data)
    tests = fold_assignments(len(data), folds, seed)
    seeds = derive_seeds(seed, folds)

    def run_fold(fold: int) -> float:
        test = tests[fold]
        train = np.setdiff1d(np.arange(len(data)), test)
        result = fit_multi_start(data.subset(train), cfg, n_starts, seeds[fold])
        score = heldout_logp(result.model, data.subset(test))
        logger.info(f"[{label or 'cv'}] fold {fold + 1}/{folds}: logP {score:.6f}")
        return score

    per_fold = _map(run_fold, list(range(folds)), workers, progress, f"CV {label}".strip())
    return CVReport(
        folds=folds,
        per_fold_logp=per_fold,
        mean_logp=float(np.mean(per_fold)),
        config_label=label,
        k=cfg.k,
    )


def compare_variants(
    data: CurveSet,
    base_cfg: ModelConfig,
    variants: Iterable[Variant | str],
    folds: int,
    seed: int,
    n_starts: int = DEFAULT_STARTS,
    ks: Optional[Sequence[int]] = None,
    in_sample: bool = True,
    progress: bool = False,
    workers: int = 1,
) -> list[CVReport]:
    """One report per (variant, K) on identical fold splits.

    With `in_sample`, each row also carries the within-cluster spread of a
    model fitted to the whole dataset.
    """
    rows = []
    for k in ks or [base_cfg.k]:
        for variant in variants:
            variant = Variant(variant)
            cfg = variant_config(replace(base_cfg, k=k), variant)
            report = cross_validate(
                data, cfg, folds, n_starts, seed, variant.value, progress, workers
            )
            if in_sample:
                full = fit_multi_start(data, cfg, n_starts, seed)
                report.within_stdev = within_cluster_stdev(full.model, data)
            logger.info(
                f"variant {variant.value} K={k}: mean logP {report.mean_logp:.6f}"
                + (f", within-cluster stdev {report.within_stdev:.6f}" if in_sample else "")
            )
            rows.append(report)
    return rows


def match_labels(
    truth: Sequence[int], predicted: Sequence[int], k: int
) -> tuple[float, dict[int, int]]:
    """Accuracy under the best one-to-one relabelling of predicted clusters."""
    truth = np.asarray(truth, dtype=np.intp)
    predicted = np.asarray(predicted, dtype=np.intp)
    confusion = np.zeros((k, k))
    np.add.at(confusion, (predicted, truth), 1.0)
    rows, cols = linear_sum_assignment(-confusion)
    mapping = {int(r): int(c) for r, c in zip(rows, cols)}
    accuracy = float(confusion[rows, cols].sum() / max(len(truth), 1))
    return accuracy, mapping
