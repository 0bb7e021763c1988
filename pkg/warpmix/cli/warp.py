#!/usr/bin/env python
"""
warp.py - cluster, align and score curves with a warped curve mixture
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
import texttable

from ..config import ConfigError, ModelConfig, default_grid_length, validate_config
from ..constants import (
    DEFAULT_FOLDS,
    DEFAULT_OFFSET_SIGMA,
    DEFAULT_STARTS,
    AnchorMode,
    ExitCode,
    TemplateShape,
    Variant,
)
from ..curves import CurveSet, anchor_curves
from ..em import fit_multi_start
from ..evaluate import compare_variants, cross_validate, heldout_logp
from ..inference import EnumerationLimitError, component_posterior
from ..manifest import RunManifest
from ..model import ModelFormatError, WarpMixtureModel
from ..offset import GridOverrunError
from ..reader import CurveFormatError, load_curves_csv, load_model
from ..synth import make_template_model, sample_dataset
from ..writer import (
    export_alignments,
    export_cluster_bands,
    export_scores,
    save_curves_csv,
    save_model,
    value_columns,
    write_frame,
    write_json,
)

logger = logging.getLogger(__name__)


def print_table(table_data: list[list[str]], width: int = 240) -> None:
    tt = texttable.Texttable(width)
    tt.set_deco(texttable.Texttable.HEADER)
    tt.set_cols_dtype(["t"] * len(table_data[0]))
    tt.set_cols_align(["l"] * len(table_data[0]))
    tt.add_rows(table_data)
    print(tt.draw())


def switch(value: Optional[str]) -> Optional[bool]:
    if value is None:
        return None
    return value == "on"


def resolve_config(args: argparse.Namespace) -> ModelConfig:
    """A `--config` file, if any, overridden by explicit flags."""
    base = ModelConfig.load(args.config) if args.config else ModelConfig()
    return base.with_overrides(
        k=args.clusters,
        max_shift=args.max_shift,
        max_skip=args.max_skip,
        allow_stay=switch(args.stay),
        grid_len=args.grid_len,
        offsets_enabled=switch(args.offsets),
        dirichlet_alpha=args.alpha,
        tol=args.tol,
        max_iters=args.max_iters,
        tie_transitions=False if args.untied else None,
        origin_search=True if args.origin_search else None,
    )


def read_data(args: argparse.Namespace, manifest: RunManifest) -> CurveSet:
    manifest.add_input(args.data)
    return anchor_curves(load_curves_csv(args.data), args.anchor)


def read_model(args: argparse.Namespace, manifest: RunManifest) -> WarpMixtureModel:
    manifest.add_input(args.model)
    return load_model(args.model)


def check_dims(model: WarpMixtureModel, data: CurveSet) -> None:
    if len(data) and data.dims != model.d:
        raise CurveFormatError(f"curves have D={data.dims} but the model has D={model.d}")


def run_fit(args: argparse.Namespace, manifest: RunManifest) -> None:
    data = read_data(args, manifest)
    cfg = validate_config(resolve_config(args), data)
    manifest.config = cfg.to_dict()
    result = fit_multi_start(data, cfg, args.starts, args.seed, progress=args.progress)
    save_model(result.model, args.out)
    manifest.add_output(args.out)

    model = result.model
    rows = [["component", "weight", "modal start", "step probabilities"]]
    for k in range(model.k):
        steps = model.steps[k] if model.tie_transitions else model.steps[k].mean(axis=0)
        rows.append(
            [
                str(k),
                f"{model.weights[k]:.4f}",
                str(int(np.argmax(model.init[k]))),
                " ".join(f"{p:.3f}" for p in steps),
            ]
        )
    print_table(rows)
    print(
        f"objective {result.objective:.6f} after {result.iterations} iteration(s), "
        f"converged={result.converged}, best seed {result.seed}"
    )


def run_score(args: argparse.Namespace, manifest: RunManifest) -> None:
    model = read_model(args, manifest)
    data = read_data(args, manifest)
    check_dims(model, data)
    export_scores(model, data, args.out)
    manifest.add_output(args.out)

    memberships = np.array([component_posterior(curve, model) for curve in data])
    rows = [["component", "curves", "mean posterior"]]
    for k in range(model.k):
        assigned = int(np.sum(memberships.argmax(axis=1) == k)) if len(data) else 0
        mean = float(memberships[:, k].mean()) if len(data) else 0.0
        rows.append([str(k), str(assigned), f"{mean:.4f}"])
    print_table(rows)
    if len(data):
        print(f"logP per measurement {heldout_logp(model, data):.6f}")


def run_align(args: argparse.Namespace, manifest: RunManifest) -> None:
    model = read_model(args, manifest)
    data = read_data(args, manifest)
    check_dims(model, data)
    export_alignments(model, data, args.out)
    manifest.add_output(args.out)


def run_export(args: argparse.Namespace, manifest: RunManifest) -> None:
    model = read_model(args, manifest)
    export_cluster_bands(model, args.out)
    manifest.add_output(args.out)


def run_cv(args: argparse.Namespace, manifest: RunManifest) -> None:
    data = read_data(args, manifest)
    cfg = validate_config(resolve_config(args), data)
    manifest.config = cfg.to_dict()
    report = cross_validate(
        data,
        cfg,
        args.folds,
        args.starts,
        args.seed,
        label="cv",
        progress=args.progress,
        workers=args.workers,
    )
    write_json(report.to_dict(), args.out)
    manifest.add_output(args.out)

    rows = [["fold", "logP"]]
    rows += [[str(i), f"{score:.6f}"] for i, score in enumerate(report.per_fold_logp)]
    rows.append(["mean", f"{report.mean_logp:.6f}"])
    print_table(rows)


def run_compare(args: argparse.Namespace, manifest: RunManifest) -> None:
    data = read_data(args, manifest)
    cfg = resolve_config(args)
    manifest.config = cfg.to_dict()
    reports = compare_variants(
        data,
        cfg,
        args.variants,
        args.folds,
        args.seed,
        n_starts=args.starts,
        ks=args.clusters_list,
        in_sample=not args.no_in_sample,
        progress=args.progress,
        workers=args.workers,
    )
    frame = pd.DataFrame(
        {
            "variant": [report.config_label for report in reports],
            "K": [report.k for report in reports],
            "mean_logp": [report.mean_logp for report in reports],
            "within_stdev": [report.within_stdev for report in reports],
        }
    )
    write_frame(frame, args.out)
    manifest.add_output(args.out)

    rows = [["variant", "K", "mean logP", "within-cluster stdev"]]
    for report in reports:
        stdev = "-" if report.within_stdev is None else f"{report.within_stdev:.6f}"
        rows.append([report.config_label, str(report.k), f"{report.mean_logp:.6f}", stdev])
    print_table(rows)


def run_simulate(args: argparse.Namespace, manifest: RunManifest) -> None:
    cfg = resolve_config(args)
    grid_len = cfg.grid_len or default_grid_length(cfg.max_shift, cfg.max_skip, args.max_len)
    model = make_template_model(
        cfg.k,
        args.dims,
        cfg.max_shift,
        cfg.max_skip,
        grid_len,
        shape=args.shape,
        separation=args.separation,
        noise_var=args.noise_var,
        allow_stay=cfg.allow_stay,
        offsets_enabled=cfg.offsets_enabled,
    )
    manifest.config = cfg.with_overrides(grid_len=grid_len).to_dict()
    rng = np.random.default_rng(args.seed)
    data, latents = sample_dataset(
        model, args.curves, (args.min_len, args.max_len), rng, args.offset_sigma
    )
    save_curves_csv(data, args.out)
    manifest.add_output(args.out)

    if args.true_model:
        save_model(model, args.true_model)
        manifest.add_output(args.true_model)
    if args.latents:
        offsets = [f"offset_{name}" for name in value_columns(model.d)]
        rows = [
            [curve.id, latent.component, latent.start, " ".join(map(str, latent.path))]
            + latent.offset.tolist()
            for curve, latent in zip(data, latents)
        ]
        columns = ["curve_id", "component", "start", "path"] + offsets
        write_frame(pd.DataFrame(rows, columns=columns), args.latents)
        manifest.add_output(args.latents)
    logger.info(f"Simulated {len(data)} curve(s) from a {cfg.k}-component {args.shape} model")


def add_config_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON model configuration; flags override it")
    parser.add_argument("-k", "--clusters", type=int, help="Number of components K")
    parser.add_argument("--max-shift", type=int, help="Number of start positions M")
    parser.add_argument("--max-skip", type=int, help="Largest skip S")
    parser.add_argument("--stay", choices=["on", "off"], help="Allow stay steps")
    parser.add_argument("--offsets", choices=["on", "off"], help="Solve measurement offsets")
    parser.add_argument("--grid-len", type=int, help="Grid length T (derived by default)")
    parser.add_argument("--alpha", type=float, help="Dirichlet prior strength")
    parser.add_argument("--tol", type=float, help="Relative objective tolerance")
    parser.add_argument("--max-iters", type=int, help="EM iteration cap")
    parser.add_argument(
        "--untied", action="store_true", help="Learn step probabilities per grid position"
    )
    parser.add_argument(
        "--origin-search",
        action="store_true",
        help="Try shifting converged templates along the grid",
    )


def add_common_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("-o", "--out", required=True, help="Output file")
    parser.add_argument("--seed", type=int, default=0, help="Random seed. Default is 0.")
    parser.add_argument(
        "--manifest", help="Run manifest path. Default is '<out>.manifest.json'."
    )
    parser.add_argument(
        "-p", "--progress", action="store_true", help="Show progress bars"
    )
    parser.add_argument(
        "-v", "--verbose", action="store_true", help="Increase output verbosity"
    )


def add_data_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("-d", "--data", required=True, help="Curve CSV file")
    parser.add_argument(
        "--anchor",
        choices=[mode.value for mode in AnchorMode],
        default=AnchorMode.NONE.value,
        help="Translate each curve before modelling. Default is 'none'.",
    )


def add_protocol_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--starts", type=int, default=DEFAULT_STARTS, help="EM random starts. Default is 5."
    )
    parser.add_argument(
        "--folds", type=int, default=DEFAULT_FOLDS, help="Cross-validation folds. Default is 10."
    )
    parser.add_argument(
        "--workers", type=int, default=1, help="Threads used for folds. Default is 1."
    )


def get_arguments(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Curve clustering with time warping")
    subparsers = parser.add_subparsers(dest="command", required=True)

    fit = subparsers.add_parser("fit", help="Fit a model with multi-start MAP-EM")
    add_data_arguments(fit)
    add_config_arguments(fit)
    add_protocol_arguments(fit)
    add_common_arguments(fit)
    fit.set_defaults(handler=run_fit)

    for name, handler, help_text in (
        ("score", run_score, "Per-curve log-likelihoods and memberships"),
        ("align", run_align, "Viterbi alignment of every observation"),
    ):
        sub = subparsers.add_parser(name, help=help_text)
        sub.add_argument("-m", "--model", required=True, help="Model document")
        add_data_arguments(sub)
        add_common_arguments(sub)
        sub.set_defaults(handler=handler)

    export = subparsers.add_parser("export", help="Cluster means with 2-sigma bands")
    export.add_argument("-m", "--model", required=True, help="Model document")
    add_common_arguments(export)
    export.set_defaults(handler=run_export)

    cv = subparsers.add_parser("cv", help="Cross-validated logP of one configuration")
    add_data_arguments(cv)
    add_config_arguments(cv)
    add_protocol_arguments(cv)
    add_common_arguments(cv)
    cv.set_defaults(handler=run_cv)

    compare = subparsers.add_parser("compare", help="Cross-validate model variants")
    add_data_arguments(compare)
    add_config_arguments(compare)
    add_protocol_arguments(compare)
    add_common_arguments(compare)
    compare.add_argument(
        "--variants",
        nargs="+",
        choices=[variant.value for variant in Variant],
        default=[variant.value for variant in Variant],
        help="Variants to compare. Default is all.",
    )
    compare.add_argument(
        "--clusters-list", nargs="+", type=int, help="Component counts to sweep"
    )
    compare.add_argument(
        "--no-in-sample",
        action="store_true",
        help="Skip the full-data fit behind the within-cluster stdev column",
    )
    compare.set_defaults(handler=run_compare)

    simulate = subparsers.add_parser("simulate", help="Sample curves from a template model")
    add_config_arguments(simulate)
    add_common_arguments(simulate)
    simulate.add_argument("--dims", type=int, default=1, help="Dimensions D. Default is 1.")
    simulate.add_argument(
        "--shape",
        choices=[shape.value for shape in TemplateShape],
        default=TemplateShape.BUMP.value,
        help="Template mean shape. Default is 'bump'.",
    )
    simulate.add_argument("--separation", type=float, default=1.0, help="Mean amplitude")
    simulate.add_argument("--noise-var", type=float, default=0.01, help="Noise variance")
    simulate.add_argument("--curves", type=int, default=100, help="Number of curves")
    simulate.add_argument("--min-len", type=int, default=10, help="Shortest curve")
    simulate.add_argument("--max-len", type=int, default=20, help="Longest curve")
    simulate.add_argument(
        "--offset-sigma",
        type=float,
        default=DEFAULT_OFFSET_SIGMA,
        help="Standard deviation of per-curve offsets",
    )
    simulate.add_argument("--latents", help="Write true component, start and path per curve")
    simulate.add_argument("--true-model", help="Write the generating model document")
    simulate.set_defaults(handler=run_simulate)

    return parser.parse_args(argv)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = get_arguments(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO)

    arguments = {k: v for k, v in vars(args).items() if k != "handler"}
    manifest = RunManifest(command=args.command, seed=args.seed, arguments=arguments).start()
    try:
        args.handler(args, manifest)
    except ConfigError as e:
        logger.error(f"configuration error: {e}")
        return ExitCode.CONFIG
    except (CurveFormatError, GridOverrunError) as e:
        logger.error(f"input format error: {e}")
        return ExitCode.INPUT_FORMAT
    except ModelFormatError as e:
        logger.error(f"model format error: {e}")
        return ExitCode.MODEL_FORMAT
    except (ValueError, OSError, EnumerationLimitError) as e:
        logger.error(f"{args.command} failed: {e}")
        return ExitCode.FAILURE

    manifest.finish()
    manifest.save(args.manifest or Path(f"{args.out}.manifest.json"))
    return ExitCode.OK


if __name__ == "__main__":
    sys.exit(main())
