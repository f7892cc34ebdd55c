"""Command-line interface: fuse, evaluate, trace, defaults.

Configuration precedence: built-in defaults < --config file < environment
(SALFUSE_<COMMAND>_<OPTION>) < explicit flags.
"""

from __future__ import annotations

import functools
from pathlib import Path

import click

from .config import FusionConfig
from .errors import SalfuseError
from .imgio import save_gray_png, write_text_atomic
from .metrics import convergence_trace
from .pipeline import (
    RunManifest,
    difficulty_csv,
    evaluate_dataset,
    expertise_csv,
    fuse_image,
    trace_csv,
)

_CONTEXT = dict(auto_envvar_prefix="SALFUSE", help_option_names=["-h", "--help"])


def _config_options(fn):
    options = [
        click.option(
            "--config",
            "config_path",
            type=click.Path(exists=True, dir_okay=False, path_type=Path),
            help="Plain-text key=value config file.",
        ),
        click.option(
            "--mode",
            type=click.Choice(["stats", "latent"]),
            help="Expertise estimator.",
        ),
        click.option(
            "--knowledge",
            type=click.Choice(["boundary", "file"]),
            help="External knowledge source.",
        ),
        click.option("--generations", type=int, help="Update generations."),
        click.option("--seed", type=int, help="RNG seed for clustering."),
        click.option(
            "--superpixels",
            "n_superpixels",
            type=int,
            help="Target superpixel count.",
        ),
        click.option(
            "--out-dir",
            type=click.Path(file_okay=False, path_type=Path),
            default=Path("out"),
            show_default=True,
            help="Output directory.",
        ),
    ]
    for option in reversed(options):
        fn = option(fn)
    return functools.wraps(fn)(fn)


def _build_config(ctx: click.Context, config_path: Path | None, **flags) -> FusionConfig:
    config = FusionConfig()
    if config_path is not None:
        config = config.apply_file(config_path)
    overrides = {}
    for name, value in flags.items():
        if value is None:
            continue
        source = ctx.get_parameter_source(name)
        if source is not None and source.name in ("COMMANDLINE", "ENVIRONMENT"):
            overrides[name] = value
    if overrides:
        config = config.replace(**overrides)
    return config.validate()


def _apply_knowledge_map(
    ctx: click.Context, config: FusionConfig, knowledge_map: Path | None
) -> FusionConfig:
    """A supplied knowledge raster selects file mode, unless contradicted."""
    if knowledge_map is None:
        return config
    source = ctx.get_parameter_source("knowledge")
    explicit = source is not None and source.name in ("COMMANDLINE", "ENVIRONMENT")
    if explicit and config.knowledge == "boundary":
        raise click.UsageError(
            "--knowledge-map conflicts with --knowledge boundary"
        )
    return config.replace(knowledge="file")


def _parse_map_specs(specs: tuple[str, ...]) -> tuple[tuple[str, Path], ...]:
    candidates = []
    for entry in specs:
        model, sep, path = entry.partition("=")
        if not sep or not model or not path:
            raise click.BadParameter(
                f"expected MODEL=PATH, got {entry!r}", param_hint="--map"
            )
        candidates.append((model, Path(path)))
    return tuple(candidates)


@click.group(context_settings=_CONTEXT)
def main() -> None:
    """Fuse candidate saliency maps into a single integrated map."""


@main.command()
@click.option(
    "--image",
    type=click.Path(path_type=Path),
    required=True,
    help="Input RGB image (PNG or JPEG).",
)
@click.option(
    "--map",
    "map_specs",
    multiple=True,
    required=True,
    metavar="MODEL=PATH",
    help="Candidate saliency map; repeat per model.",
)
@click.option(
    "--knowledge-map",
    type=click.Path(path_type=Path),
    help="External knowledge raster (required with --knowledge file).",
)
@click.option(
    "--dump-generations",
    is_flag=True,
    help="Also write the reference raster and expertise CSV per generation.",
)
@_config_options
@click.pass_context
def fuse(ctx, image, map_specs, knowledge_map, dump_generations, config_path,
         out_dir, **flags):
    """Fuse one image's candidate maps and write the result."""
    config = _apply_knowledge_map(
        ctx, _build_config(ctx, config_path, **flags), knowledge_map
    )
    manifest = RunManifest(
        image_path=image,
        candidates=_parse_map_specs(map_specs),
        knowledge_path=knowledge_map,
    )
    try:
        artifacts = fuse_image(manifest, config, collect_generations=dump_generations)
        stem = artifacts.image_id
        save_gray_png(out_dir / f"{stem}_final.png", artifacts.saliency)
        expertise = artifacts.result.expertise
        if expertise is not None:
            write_text_atomic(
                out_dir / f"{stem}_expertise.csv",
                expertise_csv(artifacts.model_ids, expertise),
            )
            if expertise.mode == "latent":
                write_text_atomic(
                    out_dir / f"{stem}_difficulty.csv", difficulty_csv(expertise)
                )
        if dump_generations:
            for state in artifacts.generations:
                ref = artifacts.grid
                save_gray_png(
                    out_dir / f"{stem}_gen{state.generation}_ref.png",
                    state.s_ref[ref.labels],
                )
                write_text_atomic(
                    out_dir / f"{stem}_gen{state.generation}_expertise.csv",
                    expertise_csv(artifacts.model_ids, state.expertise),
                )
    except SalfuseError as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"wrote {out_dir / (stem + '_final.png')}")


@main.command()
@click.option("--image", type=click.Path(path_type=Path), required=True)
@click.option(
    "--map",
    "map_specs",
    multiple=True,
    required=True,
    metavar="MODEL=PATH",
)
@click.option("--knowledge-map", type=click.Path(path_type=Path))
@_config_options
@click.pass_context
def trace(ctx, image, map_specs, knowledge_map, config_path, out_dir, **flags):
    """Record the per-generation reference change for one image."""
    config = _apply_knowledge_map(
        ctx, _build_config(ctx, config_path, **flags), knowledge_map
    )
    manifest = RunManifest(
        image_path=image,
        candidates=_parse_map_specs(map_specs),
        knowledge_path=knowledge_map,
    )
    try:
        artifacts = fuse_image(manifest, config)
        series, converged = convergence_trace(
            artifacts.result.trace, config.convergence_tol
        )
        out_path = out_dir / f"{artifacts.image_id}_trace.csv"
        write_text_atomic(out_path, trace_csv(series))
    except SalfuseError as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"wrote {out_path} (converged={str(converged).lower()})")


@main.command()
@click.argument(
    "dataset", type=click.Path(exists=True, file_okay=False, path_type=Path)
)
@click.option(
    "--methods",
    default="am-stats,am-latent,ave,candidates",
    show_default=True,
    help="Comma-separated list; 'candidates' expands to every model found.",
)
@click.option(
    "--jobs",
    type=int,
    default=0,
    show_default="cpu count",
    help="Worker processes (0 = cpu count).",
)
@_config_options
@click.pass_context
def evaluate(ctx, dataset, methods, jobs, config_path, out_dir, **flags):
    """Fuse and score every image of a dataset directory."""
    config = _build_config(ctx, config_path, **flags)
    method_list = [m.strip() for m in methods.split(",") if m.strip()]
    try:
        report, skipped = evaluate_dataset(
            dataset, method_list, config, jobs=jobs, out_dir=out_dir
        )
    except SalfuseError as exc:
        raise click.ClickException(str(exc)) from exc
    if report is None:
        click.echo(
            "warning: no gt directory found; wrote fused maps only, "
            "metrics omitted",
            err=True,
        )
    else:
        click.echo(f"wrote {Path(out_dir) / 'report.csv'}")
        for method, f, err in report.aggregates():
            click.echo(f"{method}: F={f:.4f} MAE={err:.4f}")
    if skipped:
        click.echo(
            f"skipped {len(skipped)} image(s) with empty ground truth", err=True
        )


@main.command()
def defaults() -> None:
    """Print every configuration key with its default value."""
    for key, value in FusionConfig().as_items():
        click.echo(f"{key}={value}")


if __name__ == "__main__":
    main()
