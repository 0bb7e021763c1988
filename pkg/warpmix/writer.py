from __future__ import annotations

import contextlib
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import IO, Any, Iterator, Union

import numpy as np
import pandas as pd

from .constants import WARPMIX_SCHEMA_VERSION, CurveColumns, ModelKeys
from .curves import CurveSet
from .inference import build_lattice, viterbi_align
from .model import WarpMixtureModel

logger = logging.getLogger(__name__)

# 17 significant digits round-trip every float64
FLOAT_FORMAT = "%.17g"


@contextlib.contextmanager
def atomic_open(path: Union[str, Path]) -> Iterator[IO[str]]:
    """Write text to a sibling temp file and rename it over `path` on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, temp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as file:
            yield file
        os.replace(temp_name, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(temp_name)
        raise
    logger.debug(f"Wrote {path}")


def write_json(document: Any, path: Union[str, Path]) -> None:
    with atomic_open(path) as file:
        json.dump(document, file, indent=2)
        file.write("\n")


def write_frame(frame: pd.DataFrame, path: Union[str, Path]) -> None:
    with atomic_open(path) as file:
        frame.to_csv(file, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def model_document(model: WarpMixtureModel) -> dict[str, Any]:
    return {
        ModelKeys.SCHEMA_VERSION: WARPMIX_SCHEMA_VERSION,
        ModelKeys.K: model.k,
        ModelKeys.D: model.d,
        ModelKeys.T: model.t,
        ModelKeys.M: model.m,
        ModelKeys.S: model.s,
        ModelKeys.FLAGS: {
            ModelKeys.Flags.ALLOW_STAY: model.allow_stay,
            ModelKeys.Flags.OFFSETS_ENABLED: model.offsets_enabled,
            ModelKeys.Flags.TIE_TRANSITIONS: model.tie_transitions,
        },
        # json writes floats with repr, which reads back bit-exactly
        ModelKeys.WEIGHTS: model.weights.tolist(),
        ModelKeys.INIT: model.init.tolist(),
        ModelKeys.STEPS: model.steps.tolist(),
        ModelKeys.MEANS: model.means.tolist(),
        ModelKeys.VARIANCES: model.variances.tolist(),
    }


def save_model(model: WarpMixtureModel, path: Union[str, Path]) -> None:
    write_json(model_document(model), path)
    logger.info(f"Saved model (K={model.k}, T={model.t}, D={model.d}) to {path}")


def value_columns(dims: int) -> list[str]:
    return [f"{CurveColumns.VALUE_PREFIX}{d}" for d in range(dims)]


def save_curves_csv(data: CurveSet, path: Union[str, Path]) -> None:
    columns = [CurveColumns.CURVE_ID, CurveColumns.STEP] + value_columns(data.dims)
    frames = [
        pd.DataFrame(
            {
                CurveColumns.CURVE_ID: curve.id,
                CurveColumns.STEP: np.arange(curve.length),
                **{name: curve.points[:, d] for d, name in enumerate(value_columns(curve.dims))},
            }
        )
        for curve in data
    ]
    frame = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=columns)
    write_frame(frame[columns], path)
    logger.info(f"Saved {len(data)} curve(s) to {path}")


def export_alignments(
    model: WarpMixtureModel, data: CurveSet, path: Union[str, Path]
) -> None:
    """One row per observation: its component, grid position, offset and residual."""
    offsets = [f"offset_{name}" for name in value_columns(model.d)]
    residuals = [f"residual_{name}" for name in value_columns(model.d)]
    columns = [CurveColumns.CURVE_ID, CurveColumns.STEP, "component", "grid_position"]
    columns += offsets + residuals
    rows = []
    for curve in data:
        alignment = viterbi_align(curve, model)
        positions = np.asarray(alignment.path)
        residual = curve.points - alignment.offset - model.means[alignment.component, positions]
        for j, position in enumerate(alignment.path):
            rows.append(
                [curve.id, j, alignment.component, position]
                + alignment.offset.tolist()
                + residual[j].tolist()
            )
    write_frame(pd.DataFrame(rows, columns=columns), path)
    logger.info(f"Exported alignments of {len(data)} curve(s) to {path}")


def export_cluster_bands(model: WarpMixtureModel, path: Union[str, Path]) -> None:
    """Cluster means with +/- two standard deviation bands, one row per cell."""
    k, t, d = np.meshgrid(
        np.arange(model.k), np.arange(model.t), np.arange(model.d), indexing="ij"
    )
    half = 2.0 * np.sqrt(model.variances)
    frame = pd.DataFrame(
        {
            "component": k.ravel(),
            "grid_position": t.ravel(),
            "dim": d.ravel(),
            "mean": model.means.ravel(),
            "lower": (model.means - half).ravel(),
            "upper": (model.means + half).ravel(),
        }
    )
    write_frame(frame, path)
    logger.info(f"Exported cluster bands to {path}")


def export_scores(model: WarpMixtureModel, data: CurveSet, path: Union[str, Path]) -> None:
    """Per-curve log-likelihood, MAP component and component posteriors."""
    probs = [f"p{k}" for k in range(model.k)]
    rows = []
    for curve in data:
        lattice = build_lattice(curve, model)
        membership = lattice.cutset.sum(axis=1)
        rows.append(
            [curve.id, lattice.log_evidence, int(np.argmax(membership))] + membership.tolist()
        )
    frame = pd.DataFrame(rows, columns=[CurveColumns.CURVE_ID, "loglik", "component"] + probs)
    write_frame(frame, path)
    logger.info(f"Exported scores of {len(data)} curve(s) to {path}")
