"""End-to-end dataset generation over a process pool.

Each scene draws from its own RNG stream keyed by (seed, scene index), so the
output does not depend on the number of workers. Workers write the images;
the parent assembles the COCO index files in scene order.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .assets import family_templates
from .dataset import assemble_index, category_records, emit_scene, split_dataset, subset, write_coco
from .render import RenderSettings, annotate_scene, rasterize
from .scene import GenerationConfig, generate_scene, scene_rng

log = logging.getLogger(__name__)

_WORKER: dict = {}


@dataclass(frozen=True)
class GenerationSummary:
    scenes: int
    annotations: int
    split_sizes: tuple[int, int, int]
    elapsed_s: float

    @property
    def scenes_per_second(self) -> float:
        return self.scenes / self.elapsed_s if self.elapsed_s > 0 else float("inf")


def default_jobs() -> int:
    env = os.environ.get("GRASPME_JOBS")
    if env:
        return max(1, int(env))
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return max(1, os.cpu_count() or 1)


def _init_worker(config: GenerationConfig, family: str, mesh_dir: str | None, images_dir: str, seed: int) -> None:
    templates = family_templates(family, mesh_dir)
    _WORKER.update(
        config=config,
        templates=templates,
        category_ids={c["name"]: c["id"] for c in category_records(templates)},
        images_dir=images_dir,
        seed=seed,
    )


def _build_scene(index: int):
    w = _WORKER
    scene = generate_scene(scene_rng(w["seed"], index), w["config"], w["templates"], seed=w["seed"])
    buffers = rasterize(scene, RenderSettings(segments=w["config"].segments))
    annotations = annotate_scene(scene, buffers)
    return emit_scene(buffers, annotations, w["images_dir"], index, w["category_ids"])


def generate_dataset(out_dir: str | Path, n_scenes: int, seed: int, family: str = "simple",
                     config: GenerationConfig | None = None, jobs: int | None = None,
                     mesh_dir: str | Path | None = None) -> GenerationSummary:
    """Render ``n_scenes`` scenes into ``out_dir`` and write the split index files.

    Layout: ``images/{rgb,depth,seg}_NNNNNN.png`` and
    ``{train,val,test}/annotations.json``.
    """
    if n_scenes < 10:
        raise ValueError(f"need at least 10 scenes, got {n_scenes}")
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    config = config or GenerationConfig()
    jobs = jobs or default_jobs()
    out_dir = Path(out_dir)
    images_dir = out_dir / "images"
    images_dir.mkdir(parents=True, exist_ok=True)
    mesh_dir = str(mesh_dir) if mesh_dir is not None else None
    init_args = (config, family, mesh_dir, str(images_dir), seed)
    categories = category_records(family_templates(family, mesh_dir))

    start = time.perf_counter()
    results = []
    if jobs == 1:
        _init_worker(*init_args)
        for i in range(n_scenes):
            results.append(_build_scene(i))
            _progress(i + 1, n_scenes)
    else:
        with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=init_args) as pool:
            for i, res in enumerate(pool.map(_build_scene, range(n_scenes), chunksize=4)):
                results.append(res)
                _progress(i + 1, n_scenes)

    full = assemble_index([r[0] for r in results], [r[1] for r in results], categories)
    splits = split_dataset(n_scenes, seed)
    for name, ids in zip(("train", "val", "test"), splits):
        split_dir = out_dir / name
        split_dir.mkdir(exist_ok=True)
        (split_dir / "annotations.json").write_text(write_coco(subset(full, ids)))
    elapsed = time.perf_counter() - start
    return GenerationSummary(n_scenes, len(full.annotations), tuple(len(s) for s in splits), elapsed)


def _progress(done: int, total: int) -> None:
    if done == total or done % max(1, total // 20) == 0:
        log.info("rendered %d/%d scenes", done, total)
