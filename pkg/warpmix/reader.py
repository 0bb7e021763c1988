from __future__ import annotations

import json
import logging
import math
import re
from pathlib import Path
from typing import Any, Union

import numpy as np
import numpy.typing as npt
import pandas as pd

from .constants import WARPMIX_SCHEMA_VERSION, CurveColumns, ModelKeys
from .curves import Curve, CurveSet
from .model import ModelFormatError, WarpMixtureModel

logger = logging.getLogger(__name__)

VALUE_COLUMN = re.compile(rf"^{CurveColumns.VALUE_PREFIX}(\d+)$")


class CurveFormatError(ValueError):
    pass


def _line(index: int) -> int:
    # header is line 1
    return index + 2


def _parse_floats(frame: pd.DataFrame, column: str) -> list[float]:
    values = []
    for index, text in frame[column].items():
        try:
            value = float(text)
        except ValueError:
            raise CurveFormatError(
                f"row {_line(index)}, column {column!r}: {text!r} is not a number"
            ) from None
        if not math.isfinite(value):
            raise CurveFormatError(
                f"row {_line(index)}, column {column!r}: non-finite value {text!r}"
            )
        values.append(value)
    return values


def load_curves_csv(path: Union[str, Path]) -> CurveSet:
    """
    Read curves from `curve_id, step, d0..d{D-1}` rows in any order.

    Args:
        path (str | Path): CSV file with one row per measurement.

    Returns:
        CurveSet: Curves in order of first appearance, steps sorted from 0.

    Raises:
        CurveFormatError: On missing columns, non-numeric values, step gaps or
            duplicates, or curves with differing dimensionality.
    """
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise CurveFormatError(f"{path} is not a curve table: {e}") from e
    for column in (CurveColumns.CURVE_ID, CurveColumns.STEP):
        if column not in frame.columns:
            raise CurveFormatError(f"missing column {column!r} in {path}")
    dims = sorted(int(match.group(1)) for c in frame.columns if (match := VALUE_COLUMN.match(c)))
    if not dims:
        raise CurveFormatError(f"missing column '{CurveColumns.VALUE_PREFIX}0' in {path}")
    for d in range(len(dims)):
        if dims[d] != d:
            raise CurveFormatError(f"missing column '{CurveColumns.VALUE_PREFIX}{d}' in {path}")
    columns = [f"{CurveColumns.VALUE_PREFIX}{d}" for d in dims]

    # a curve whose trailing value column is blank throughout was written with a smaller D
    blank = frame[columns].isna() | (frame[columns] == "")
    for curve_id, rows in blank.groupby(frame[CurveColumns.CURVE_ID], sort=False):
        all_blank = rows.all(axis=0)
        if all_blank.any() and not all_blank.all():
            raise CurveFormatError(
                f"curve {curve_id!r} has {int((~all_blank).sum())} value column(s), "
                f"expected {len(columns)} (inconsistent dimensionality)"
            )

    steps = []
    for index, text in frame[CurveColumns.STEP].items():
        try:
            steps.append(int(text))
        except ValueError:
            raise CurveFormatError(
                f"row {_line(index)}, column {CurveColumns.STEP!r}: {text!r} is not an integer"
            ) from None
    values = np.empty((len(frame), len(columns)))
    for d, column in enumerate(columns):
        values[:, d] = _parse_floats(frame, column)
    frame = frame.assign(**{CurveColumns.STEP: steps})

    curves = []
    for curve_id, rows in frame.groupby(CurveColumns.CURVE_ID, sort=False):
        rows = rows.sort_values(CurveColumns.STEP, kind="stable")
        observed = rows[CurveColumns.STEP].to_numpy()
        expected = np.arange(len(observed))
        if not np.array_equal(observed, expected):
            bad = int(np.flatnonzero(observed != expected)[0])
            index = rows.index[bad]
            kind = "duplicate" if bad > 0 and observed[bad] == observed[bad - 1] else "gap at"
            raise CurveFormatError(
                f"row {_line(index)}, column {CurveColumns.STEP!r}: curve {curve_id!r} has "
                f"{kind} step {expected[bad] if kind == 'gap at' else observed[bad]}"
            )
        curves.append(Curve(str(curve_id), values[rows.index.to_numpy()]))

    data = CurveSet(tuple(curves))
    logger.info(f"Loaded {len(data)} curve(s), D={data.dims}, l_max={data.l_max} from {path}")
    return data


def _array(document: dict[str, Any], key: str) -> npt.NDArray[np.float64]:
    if key not in document:
        raise ModelFormatError(f"model document is missing {key!r}")
    try:
        return np.asarray(document[key], dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise ModelFormatError(f"model field {key!r} is not a numeric array: {e}") from e


def model_from_document(document: dict[str, Any]) -> WarpMixtureModel:
    version = document.get(ModelKeys.SCHEMA_VERSION)
    if version != WARPMIX_SCHEMA_VERSION:
        raise ModelFormatError(
            f"schema version {version!r} is not supported (expected {WARPMIX_SCHEMA_VERSION})"
        )
    flags = document.get(ModelKeys.FLAGS, {})
    model = WarpMixtureModel(
        weights=_array(document, ModelKeys.WEIGHTS),
        init=_array(document, ModelKeys.INIT),
        steps=_array(document, ModelKeys.STEPS),
        means=_array(document, ModelKeys.MEANS),
        variances=_array(document, ModelKeys.VARIANCES),
        allow_stay=bool(flags.get(ModelKeys.Flags.ALLOW_STAY, False)),
        offsets_enabled=bool(flags.get(ModelKeys.Flags.OFFSETS_ENABLED, False)),
        tie_transitions=bool(flags.get(ModelKeys.Flags.TIE_TRANSITIONS, True)),
    )
    if model.means.ndim != 3:
        raise ModelFormatError(f"means must be a K x T x D array, got shape {model.means.shape}")
    model.check_invariants()

    declared = {
        ModelKeys.K: model.k,
        ModelKeys.D: model.d,
        ModelKeys.T: model.t,
        ModelKeys.M: model.m,
        ModelKeys.S: model.s,
    }
    for key, actual in declared.items():
        if key in document and document[key] != actual:
            raise ModelFormatError(f"declared {key}={document[key]} but arrays imply {actual}")
    return model


def load_model(path: Union[str, Path]) -> WarpMixtureModel:
    with open(path, mode="r", encoding="utf-8") as file:
        try:
            document = json.load(file)
        except json.JSONDecodeError as e:
            raise ModelFormatError(f"{path} is not a model document: {e}") from e
    model = model_from_document(document)
    logger.info(f"Loaded model (K={model.k}, T={model.t}, D={model.d}) from {path}")
    return model


def load_cluster_bands(
    path: Union[str, Path]
) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    """Means and band half-widths, each (K, T, D), from an exported band table."""
    frame = pd.read_csv(path, dtype={"mean": str, "lower": str, "upper": str})
    k = int(frame["component"].max()) + 1
    t = int(frame["grid_position"].max()) + 1
    d = int(frame["dim"].max()) + 1
    means = np.zeros((k, t, d))
    half = np.zeros((k, t, d))
    index = tuple(frame[name].to_numpy() for name in ("component", "grid_position", "dim"))
    means[index] = _parse_floats(frame, "mean")
    half[index] = np.asarray(_parse_floats(frame, "upper")) - means[index]
    return means, half
