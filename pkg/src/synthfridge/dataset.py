"""Dataset generation and coverage encoding on disk.

Layout of a generated dataset directory::

    manifest.json           format version, config hash, master seed, image list
    images/<id>.png         RGB, 8-bit
    labels/<id>.txt         KITTI labels
    instance/<id>.png       16-bit instance ids (0 = fridge/background)
    depth/<id>.f32          raw little-endian float32 depth in meters, row-major, +inf = background
    meta/<id>.json          camera, scene seed, image id, depth shape
    scenes/<scene>.json     composed scene document

Scene ``j`` is composed from ``split_seed(seed, j)`` and contributes one image
per camera, ids ``<j:06d>_<camera>``. Images are numbered scene-major, so an
``n``-image run is a file-level prefix of any longer run with the same config.
"""

from __future__ import annotations

import json
import logging
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .annotate import parse_kitti, write_kitti, annotate_scene
from .composer import compose_scene, split_seed
from .config import GenerationConfig
from .detector_math import encode_coverage, save_grid
from .meshio import ModelRepository, RepoModel, parse_obj, procedural_repository
from .renderer import Rasterizer

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
SUBDIRS = ("images", "labels", "instance", "depth", "meta", "scenes")


@dataclass(frozen=True)
class ImageEntry:
    image_id: str
    scene_index: int
    camera_index: int
    scene_seed: int


def load_repository(cfg: GenerationConfig) -> ModelRepository:
    """The model dictionary used for generation, already cut to ``dictionary_size``."""
    if cfg.repository_dir:
        root = Path(cfg.repository_dir)
        index = {}
        if (root / "index.json").exists():
            index = {e["file"]: e for e in json.loads((root / "index.json").read_text())}
        models = []
        for p in sorted(root.glob("*.obj")):
            e = index.get(p.name, {})
            mesh = parse_obj(p.read_text(), name=p.stem).normalized()
            models.append(RepoModel(mesh, e.get("label", "product"), tuple(e.get("height", (0.1, 0.25)))))
        repo = ModelRepository(tuple(models))
    else:
        repo = procedural_repository(cfg.repository_size)
    return repo.subset(cfg.dictionary_size) if cfg.dictionary_size else repo


def plan_images(cfg: GenerationConfig, repo: ModelRepository, count: int) -> list[ImageEntry]:
    entries: list[ImageEntry] = []
    j = 0
    while len(entries) < count:
        seed = split_seed(cfg.seed, j)
        scene = compose_scene(repo, cfg, seed)
        for c in range(len(scene.cameras)):
            if len(entries) == count:
                break
            entries.append(ImageEntry(f"{j:06d}_{c}", j, c, seed))
        j += 1
    return entries


def _write_png(path: Path, arr: np.ndarray) -> None:
    Image.fromarray(arr).save(path, format="PNG", optimize=False)


def render_scene_images(cfg: GenerationConfig, repo: ModelRepository, entries: list[ImageEntry], out: Path) -> None:
    """Render, annotate and write the given images, which must all come from one scene."""
    scene = compose_scene(repo, cfg, entries[0].scene_seed)
    cfg_hash = cfg.content_hash()
    doc = json.dumps(scene.to_dict(), sort_keys=True, indent=1)
    (out / "scenes" / f"{entries[0].scene_index:06d}.json").write_text(doc + "\n")
    for e in entries:
        ras = Rasterizer(scene, e.camera_index)
        full = ras.full()
        solos = {o.instance_id: ras.solo(o.instance_id, extended=True, shade=False) for o in scene.objects}
        anns = annotate_scene(scene, e.camera_index, full, solos, cfg.annotate)
        _write_png(out / "images" / f"{e.image_id}.png", full.rgb)
        _write_png(out / "instance" / f"{e.image_id}.png", full.instance)
        (out / "depth" / f"{e.image_id}.f32").write_bytes(full.depth.astype("<f4").tobytes())
        (out / "labels" / f"{e.image_id}.txt").write_text(write_kitti(anns))
        cam = scene.cameras[e.camera_index]
        meta = {
            "image_id": e.image_id, "scene_index": e.scene_index, "camera_index": e.camera_index,
            "scene_seed": e.scene_seed, "config_hash": cfg_hash, "pattern": scene.pattern,
            "camera": {"fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy, "width": cam.width,
                       "height": cam.height, "rotation": cam.pose.rotation.tolist(),
                       "translation": cam.pose.translation.tolist()},
            "depth": {"dtype": "<f4", "shape": [cam.height, cam.width], "background": "inf"},
            "objects": len(anns), "ignored": sum(a.ignore for a in anns),
        }
        (out / "meta" / f"{e.image_id}.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")


def _render_job(args):
    cfg, entries, out = args
    render_scene_images(cfg, load_repository(cfg), entries, Path(out))
    return entries[-1].image_id


def write_manifest(cfg: GenerationConfig, entries: list[ImageEntry], out: Path) -> None:
    doc = {
        "version": MANIFEST_VERSION,
        "config_hash": cfg.content_hash(),
        "seed": cfg.seed,
        "dataset_size": len(entries),
        "dictionary_size": cfg.dictionary_size,
        "image_size": cfg.scene.image_size,
        "images": [{"id": e.image_id, "scene_index": e.scene_index, "camera_index": e.camera_index,
                    "scene_seed": e.scene_seed} for e in entries],
    }
    (out / "manifest.json").write_text(json.dumps(doc, indent=1) + "\n")


def prepare_output(out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for d in SUBDIRS:
        (out / d).mkdir(exist_ok=True)


def generate(cfg: GenerationConfig, out: Path | None = None, workers: int | None = None) -> list[ImageEntry]:
    out = Path(out or cfg.output_dir)
    workers = workers or cfg.workers
    repo = load_repository(cfg)
    entries = plan_images(cfg, repo, cfg.dataset_size)
    prepare_output(out)
    by_scene: dict[int, list[ImageEntry]] = {}
    for e in entries:
        by_scene.setdefault(e.scene_index, []).append(e)
    jobs = [(cfg, group, str(out)) for group in by_scene.values()]
    if workers == 1:
        for job in jobs:
            _render_job(job)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for done in pool.map(_render_job, jobs):
                log.debug("finished through %s", done)
    write_manifest(cfg, entries, out)
    return entries


def read_manifest(root: Path) -> dict:
    return json.loads((Path(root) / "manifest.json").read_text())


def copy_prefix(src: Path, dst: Path, cfg: GenerationConfig, entries: list[ImageEntry]) -> None:
    """Materialize the first images of an existing dataset as a dataset of their own."""
    prepare_output(dst)
    for e in entries:
        for sub, ext in (("images", ".png"), ("labels", ".txt"), ("instance", ".png"),
                         ("depth", ".f32"), ("meta", ".json")):
            shutil.copyfile(src / sub / f"{e.image_id}{ext}", dst / sub / f"{e.image_id}{ext}")
    for j in sorted({e.scene_index for e in entries}):
        shutil.copyfile(src / "scenes" / f"{j:06d}.json", dst / "scenes" / f"{j:06d}.json")
    write_manifest(cfg, entries, dst)


def encode_dataset(root: Path, stride: int, image_size: tuple[int, int]) -> tuple[list[str], dict[str, str]]:
    """Write ``coverage/<id>.npz`` for every label file; returns (encoded ids, errors by file)."""
    root = Path(root)
    labels = sorted((root / "labels").glob("*.txt")) if (root / "labels").is_dir() else []
    done, errors = [], {}
    if (root / "manifest.json").exists():
        have = {p.stem for p in labels}
        for item in read_manifest(root)["images"]:
            if item["id"] not in have:
                errors[f"{item['id']}.txt"] = "label file missing"
    if labels:
        (root / "coverage").mkdir(exist_ok=True)
    for p in labels:
        try:
            anns = parse_kitti(p.read_text())
            grid = encode_coverage([a for a in anns if not a.ignore], stride, image_size)
            save_grid(grid, root / "coverage" / f"{p.stem}.npz")
            done.append(p.stem)
        except (ValueError, OSError) as e:
            errors[p.name] = str(e)
    return done, errors
