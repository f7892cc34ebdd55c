"""Batch orchestration: manifests, per-image fusion, dataset evaluation.

Dataset layout::

    <root>/images/<id>.(png|jpg|jpeg)   input images
    <root>/maps/<model>/<id>.(png|pgm)  candidate saliency maps
    <root>/gt/<id>.(png|pgm)            binary ground truth (optional)
    <root>/knowledge/<id>.(png|pgm)     external knowledge maps (optional)

All outputs are written atomically; a failed run leaves no partial files.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import FusionConfig
from .errors import EmptyGroundTruth, InputError
from .expertise import ExpertiseVector
from .fusion import CandidateStack, FusionResult, FusionState, run_fusion
from .imgio import (
    gray_png_bytes,
    load_gray,
    load_mask,
    load_rgb,
    write_bytes_atomic,
    write_text_atomic,
)
from .knowledge import KnowledgeBundle, build_knowledge
from .metrics import EvalReport, build_report, f_measure, mae
from .preprocess import SuperpixelGrid, pool, slic_segment, to_lab, unpool

_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
_MAP_SUFFIXES = (".png", ".pgm")

AM_METHODS = {"am-stats": "stats", "am-latent": "latent"}


@dataclass(frozen=True)
class RunManifest:
    """Everything needed to fuse one image."""

    image_path: Path
    candidates: tuple[tuple[str, Path], ...]  # (model id, map path)
    gt_path: Path | None = None
    knowledge_path: Path | None = None

    def validate(self) -> "RunManifest":
        if len(self.candidates) < 1:
            raise InputError("at least one candidate map is required")
        for path in self._all_paths():
            if not Path(path).is_file():
                raise InputError(f"file not found: {path}")
        return self

    def _all_paths(self) -> list[Path]:
        paths = [self.image_path] + [p for _, p in self.candidates]
        if self.gt_path is not None:
            paths.append(self.gt_path)
        if self.knowledge_path is not None:
            paths.append(self.knowledge_path)
        return paths


@dataclass
class FuseArtifacts:
    image_id: str
    model_ids: list[str]
    grid: SuperpixelGrid
    stack: CandidateStack
    knowledge: KnowledgeBundle
    result: FusionResult
    saliency: np.ndarray  # (H, W) fused map at pixel level
    generations: list[FusionState] = field(default_factory=list)


def prepare_image(
    manifest: RunManifest, config: FusionConfig
) -> tuple[SuperpixelGrid, CandidateStack, KnowledgeBundle, list[str]]:
    """Load, segment, pool, and build the knowledge bundle for one image."""
    manifest.validate()
    rgb = load_rgb(manifest.image_path)
    lab = to_lab(rgb)
    grid = slic_segment(
        lab, config.n_superpixels, config.slic_compactness, config.slic_iters
    )

    model_ids = []
    pooled = []
    for model_id, path in manifest.candidates:
        raster = load_gray(path)
        if raster.shape != grid.shape:
            raise InputError(
                f"candidate map {path} has shape {raster.shape}, "
                f"expected {grid.shape}"
            )
        model_ids.append(model_id)
        pooled.append(pool(raster, grid))
    stack = CandidateStack.from_maps(np.stack(pooled))

    external = None
    if config.knowledge == "file":
        if manifest.knowledge_path is None:
            raise InputError(
                "knowledge source is 'file' but no knowledge map was given"
            )
        external = load_gray(manifest.knowledge_path)
        if external.shape != grid.shape:
            raise InputError(
                f"knowledge map {manifest.knowledge_path} has shape "
                f"{external.shape}, expected {grid.shape}"
            )

    bundle = build_knowledge(
        grid,
        stack.binary.astype(np.int8),
        theta=config.theta,
        propagation_iters=config.propagation_iters,
        kmeans_clusters=config.kmeans_clusters,
        seed=config.seed,
        external_map=external,
    )
    return grid, stack, bundle, model_ids


def fuse_image(
    manifest: RunManifest,
    config: FusionConfig,
    collect_generations: bool = False,
) -> FuseArtifacts:
    """Run the full single-image pipeline."""
    grid, stack, bundle, model_ids = prepare_image(manifest, config)

    states: list[FusionState] = []
    observer = states.append if collect_generations else None
    result = run_fusion(stack, bundle, config, observer=observer)

    return FuseArtifacts(
        image_id=manifest.image_path.stem,
        model_ids=model_ids,
        grid=grid,
        stack=stack,
        knowledge=bundle,
        result=result,
        saliency=unpool(result.s_final, grid),
        generations=states,
    )


def expertise_csv(model_ids: list[str], ev: ExpertiseVector) -> str:
    lines = ["model,alpha,beta"]
    for model_id, a, b in zip(model_ids, ev.alpha, ev.beta):
        lines.append(f"{model_id},{a:.9g},{b:.9g}")
    return "\n".join(lines) + "\n"


def difficulty_csv(ev: ExpertiseVector) -> str:
    if ev.pi is None or ev.posterior is None:
        raise InputError("difficulty dump requires latent-mode expertise")
    lines = ["superpixel,pi,posterior"]
    for n, (p, post) in enumerate(zip(ev.pi, ev.posterior)):
        lines.append(f"{n},{p:.9g},{post:.9g}")
    return "\n".join(lines) + "\n"


def trace_csv(trace: np.ndarray) -> str:
    lines = ["generation,mean_abs_ref_change"]
    for t, value in enumerate(np.asarray(trace), start=1):
        lines.append(f"{t},{value:.9g}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Dataset evaluation


@dataclass(frozen=True)
class DatasetImage:
    image_id: str
    manifest: RunManifest


def discover_dataset(
    root: str | Path, need_knowledge: bool = False
) -> tuple[list[DatasetImage], list[str], bool]:
    """Walk the dataset layout; returns (items, model ids, gt available)."""
    root = Path(root)
    images_dir = root / "images"
    maps_dir = root / "maps"
    if not images_dir.is_dir():
        raise InputError(f"missing images directory: {images_dir}")
    if not maps_dir.is_dir():
        raise InputError(f"missing maps directory: {maps_dir}")

    model_ids = sorted(d.name for d in maps_dir.iterdir() if d.is_dir())
    if not model_ids:
        raise InputError(f"no model subdirectories under {maps_dir}")

    image_paths = sorted(
        p for p in images_dir.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES
    )
    if not image_paths:
        raise InputError(f"no images found under {images_dir}")

    gt_dir = root / "gt"
    has_gt = gt_dir.is_dir()
    knowledge_dir = root / "knowledge"

    items = []
    for image_path in image_paths:
        image_id = image_path.stem
        candidates = tuple(
            (m, _find_map(maps_dir / m, image_id)) for m in model_ids
        )
        gt_path = _find_map(gt_dir, image_id) if has_gt else None
        knowledge_path = (
            _find_map(knowledge_dir, image_id) if need_knowledge else None
        )
        manifest = RunManifest(
            image_path=image_path,
            candidates=candidates,
            gt_path=gt_path,
            knowledge_path=knowledge_path,
        )
        items.append(DatasetImage(image_id=image_id, manifest=manifest))
    return items, model_ids, has_gt


def _find_map(directory: Path, image_id: str) -> Path:
    for suffix in _MAP_SUFFIXES:
        path = directory / f"{image_id}{suffix}"
        if path.is_file():
            return path
    raise InputError(f"missing map for image {image_id!r} under {directory}")


def expand_methods(methods: list[str], model_ids: list[str]) -> list[str]:
    """Replace the 'candidates' token with the discovered model ids."""
    out: list[str] = []
    for method in methods:
        if method == "candidates":
            out.extend(model_ids)
        elif method in AM_METHODS or method == "ave" or method in model_ids:
            out.append(method)
        else:
            raise InputError(f"unknown method: {method!r}")
    return out


def _evaluate_one(
    item: DatasetImage, methods: tuple[str, ...], config: FusionConfig
) -> tuple[str, dict[str, tuple[float, float]] | None, dict[str, bytes]]:
    """Score one image under every requested method.

    Returns (image id, scores or None when the gt is empty, PNG bytes of the
    fused maps).  Runs inside worker processes; must stay picklable.
    """
    manifest = item.manifest
    grid, stack, bundle, model_ids = prepare_image(manifest, config)

    gt = load_mask(manifest.gt_path) if manifest.gt_path is not None else None
    if gt is not None and gt.shape != grid.shape:
        raise InputError(
            f"ground truth {manifest.gt_path} has shape {gt.shape}, "
            f"expected {grid.shape}"
        )

    pixel_maps: dict[str, np.ndarray] = {}
    outputs: dict[str, bytes] = {}
    for method in methods:
        if method in AM_METHODS:
            result = run_fusion(
                stack, bundle, config.replace(mode=AM_METHODS[method])
            )
            pixel_maps[method] = unpool(result.s_final, grid)
            outputs[method] = gray_png_bytes(pixel_maps[method])
        elif method == "ave":
            result = run_fusion(stack, bundle, config.replace(generations=0))
            pixel_maps[method] = unpool(result.s_final, grid)
            outputs[method] = gray_png_bytes(pixel_maps[method])
        else:  # a raw candidate, evaluated on its own pixel map
            path = dict(manifest.candidates)[method]
            pixel_maps[method] = load_gray(path)

    if gt is None:
        return item.image_id, None, outputs

    try:
        scores = {
            method: (f_measure(arr, gt), mae(arr, gt.astype(np.float64)))
            for method, arr in pixel_maps.items()
        }
    except EmptyGroundTruth:
        return item.image_id, None, outputs
    return item.image_id, scores, outputs


def evaluate_dataset(
    root: str | Path,
    methods: list[str],
    config: FusionConfig,
    jobs: int | None = None,
    out_dir: str | Path = "out",
) -> tuple[EvalReport | None, list[str]]:
    """Fuse and score every image in the dataset.

    Writes fused maps under ``out_dir/fused/<method>/`` and, when ground
    truth is present, a deterministic ``report.csv``.  Returns the report
    (None in fusion-only mode) and the ids of skipped images.
    """
    items, model_ids, has_gt = discover_dataset(
        root, need_knowledge=config.knowledge == "file"
    )
    method_list = expand_methods(methods, model_ids)
    out_dir = Path(out_dir)

    n_jobs = jobs if jobs and jobs > 0 else (os.cpu_count() or 1)
    args = [(item, tuple(method_list), config) for item in items]
    if n_jobs == 1 or len(items) == 1:
        results = [_evaluate_one(*a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool_:
            results = list(pool_.map(_evaluate_one, *zip(*args)))

    results.sort(key=lambda r: r[0])
    scores: dict[str, dict[str, tuple[float, float]]] = {}
    skipped: list[str] = []
    for image_id, per_method, outputs in results:
        for method, data in outputs.items():
            write_bytes_atomic(out_dir / "fused" / method / f"{image_id}.png", data)
        if per_method is None:
            skipped.append(image_id)
        else:
            scores[image_id] = per_method

    if not has_gt:
        return None, skipped

    report = build_report(scores, method_list, skipped)
    write_text_atomic(out_dir / "report.csv", report.to_csv())
    return report, skipped
