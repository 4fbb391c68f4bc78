"""Class-imbalanced benchmark splits from COCO-format detection annotations.

The labeled set is a random fraction of the images containing majority
classes, topped up with images of minority classes until each has at least
``k`` annotated instances. Every selected image keeps all of its annotations;
everything not selected becomes the unlabeled set, written without annotations.
"""
from __future__ import annotations

import csv
import json
import math
import zlib
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError


class AnnotationError(InputError):
    """Malformed or inconsistent annotation file."""


@dataclass
class AnnotationIndex:
    images: list  # COCO image dicts, kept verbatim
    annotations: list
    categories: list
    image_classes: dict = field(init=False, repr=False)  # image id -> set of category ids
    class_images: dict = field(init=False, repr=False)  # category id -> set of image ids

    def __post_init__(self):
        image_ids = {img["id"] for img in self.images}
        cat_ids = {cat["id"] for cat in self.categories}
        self.image_classes = {i: set() for i in image_ids}
        self.class_images = {c: set() for c in cat_ids}
        for pos, ann in enumerate(self.annotations):
            if ann["image_id"] not in image_ids:
                raise AnnotationError(f"annotations[{pos}] (id {ann.get('id')}) references unknown image {ann['image_id']}")
            if ann["category_id"] not in cat_ids:
                raise AnnotationError(f"annotations[{pos}] (id {ann.get('id')}) references unknown category {ann['category_id']}")
            self.image_classes[ann["image_id"]].add(ann["category_id"])
            self.class_images[ann["category_id"]].add(ann["image_id"])

    @property
    def image_ids(self) -> list:
        return sorted(self.image_classes)

    @property
    def category_ids(self) -> list:
        return sorted(self.class_images)

    def instance_counts(self, image_ids=None) -> dict:
        keep = None if image_ids is None else set(image_ids)
        counts = {c: 0 for c in self.class_images}
        for ann in self.annotations:
            if keep is None or ann["image_id"] in keep:
                counts[ann["category_id"]] += 1
        return counts

    def image_counts(self, image_ids=None) -> dict:
        keep = None if image_ids is None else set(image_ids)
        return {c: len(imgs if keep is None else imgs & keep) for c, imgs in self.class_images.items()}

    def instances_by_image(self) -> dict:
        """image id -> {category id: instance count}."""
        out = defaultdict(lambda: defaultdict(int))
        for ann in self.annotations:
            out[ann["image_id"]][ann["category_id"]] += 1
        return out

    def subset(self, image_ids) -> "AnnotationIndex":
        keep = set(image_ids)
        return AnnotationIndex(
            [img for img in self.images if img["id"] in keep],
            [ann for ann in self.annotations if ann["image_id"] in keep],
            list(self.categories),
        )

    def to_coco(self) -> dict:
        return {"images": self.images, "annotations": self.annotations, "categories": self.categories}

    def summary(self) -> dict:
        return {"images": len(self.images), "annotations": len(self.annotations), "categories": len(self.categories)}


_REQUIRED = {
    "images": ("id",),
    "annotations": ("id", "image_id", "category_id"),
    "categories": ("id", "name"),
}


def parse_coco(data, source: str = "<memory>") -> AnnotationIndex:
    if not isinstance(data, dict):
        raise AnnotationError(f"{source}: top level must be an object")
    for section, keys in _REQUIRED.items():
        items = data.get(section, [])
        if not isinstance(items, list):
            raise AnnotationError(f"{source}: '{section}' must be an array")
        for pos, item in enumerate(items):
            if not isinstance(item, dict):
                raise AnnotationError(f"{source}: {section}[{pos}] must be an object")
            missing = [k for k in keys if k not in item]
            if missing:
                raise AnnotationError(f"{source}: {section}[{pos}] missing {', '.join(missing)}")
    return AnnotationIndex(list(data.get("images", [])), list(data.get("annotations", [])), list(data.get("categories", [])))


def load_annotations(path) -> AnnotationIndex:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise AnnotationError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return parse_coco(data, str(path))


def apply_remap(index: AnnotationIndex, table: dict) -> AnnotationIndex:
    """Rename categories by name; a ``None`` target drops the category and its boxes.

    Categories that end up with the same name merge into the lowest id among them.
    """
    names = {cat["name"] for cat in index.categories}
    unknown = sorted(set(table) - names)
    if unknown:
        raise InputError(f"remap names not in the category list: {unknown}")
    final = {}
    id_map = {}
    for cat in sorted(index.categories, key=lambda c: c["id"]):
        target = table.get(cat["name"], cat["name"])
        if target is None:
            continue
        if target not in final:
            final[target] = {**cat, "name": target}
        id_map[cat["id"]] = final[target]["id"]
    categories = sorted(final.values(), key=lambda c: c["id"])
    annotations = [
        {**ann, "category_id": id_map[ann["category_id"]]}
        for ann in index.annotations
        if ann["category_id"] in id_map
    ]
    return AnnotationIndex(list(index.images), annotations, categories)


@dataclass
class SplitConfig:
    majority: list
    minority: list
    fraction: float = 0.10
    min_instances: int = 10
    seed: int = 0
    lvis_mode: bool = False
    remap: dict | None = None  # category name -> new name, or None to drop

    def __post_init__(self):
        overlap = set(self.majority) & set(self.minority)
        if overlap:
            raise InputError(f"classes listed as both majority and minority: {sorted(overlap)}")
        if not 0.0 < self.fraction <= 1.0:
            raise InputError(f"fraction must lie in (0, 1], got {self.fraction}")
        if self.min_instances < 0:
            raise InputError("min_instances must be >= 0")

    def rng(self, purpose: str) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(zlib.crc32(purpose.encode()),)))


def build_majority_split(index: AnnotationIndex, cfg: SplitConfig) -> set:
    majority = set(cfg.majority)
    pool = sorted(i for i, classes in index.image_classes.items() if classes & majority)
    if not pool:
        raise InputError("no images contain a majority class")
    size = math.ceil(cfg.fraction * len(pool))
    chosen = cfg.rng("majority").choice(len(pool), size=size, replace=False)
    return {pool[j] for j in chosen}


def build_minority_split(index: AnnotationIndex, cfg: SplitConfig, already_selected=()) -> set:
    """Add images until every minority class has ``min_instances`` selected instances.

    Instances in ``already_selected`` images count toward the quota; images
    added for one class also count toward every class they contain.
    """
    k = cfg.min_instances
    if k == 0 or not cfg.minority:
        return set()
    total = index.instance_counts()
    for c in cfg.minority:
        if c not in total:
            raise InputError(f"minority class {c} is not in the category list")
        if total[c] < k:
            raise InputError(f"minority class {c} has only {total[c]} instances; {k} required")
    per_image = index.instances_by_image()
    selected = set(already_selected)
    counts = defaultdict(int)
    for img in selected:
        for c, cnt in per_image[img].items():
            counts[c] += cnt
    rng = cfg.rng("minority")
    added = set()
    for c in rng.permutation(sorted(cfg.minority)).tolist():
        while counts[c] < k:
            candidates = sorted(index.class_images[c] - selected)
            img = candidates[int(rng.integers(len(candidates)))]
            selected.add(img)
            added.add(img)
            for cc, cnt in per_image[img].items():
                counts[cc] += cnt
    return added


def assemble_splits(index: AnnotationIndex, d_m, d_s):
    labeled = set(d_m) | set(d_s)
    unlabeled = set(index.image_classes) - labeled
    return labeled, unlabeled


def lvis_split(index: AnnotationIndex, cfg: SplitConfig):
    """Random fraction of all images, then one extra image per still-uncovered class."""
    ids = index.image_ids
    if not ids:
        raise InputError("annotation file has no images")
    empty = [c for c, imgs in index.class_images.items() if not imgs]
    if empty:
        raise InputError(f"classes without any instance cannot be covered: {sorted(empty)}")
    rng = cfg.rng("lvis")
    size = math.ceil(cfg.fraction * len(ids))
    labeled = {ids[j] for j in rng.choice(len(ids), size=size, replace=False)}
    covered = set().union(*(index.image_classes[i] for i in labeled)) if labeled else set()
    for c in rng.permutation(index.category_ids).tolist():
        if c in covered:
            continue
        candidates = sorted(index.class_images[c])
        img = candidates[int(rng.integers(len(candidates)))]
        labeled.add(img)
        covered |= index.image_classes[img]
    return labeled, set(ids) - labeled


def random_class_partition(class_ids, n_minority: int, seed: int = 0):
    """Seeded split of class ids into (majority, minority) with ``n_minority`` minority classes."""
    class_ids = sorted(class_ids)
    if not 0 <= n_minority <= len(class_ids):
        raise InputError(f"cannot pick {n_minority} minority classes from {len(class_ids)}")
    order = np.random.default_rng(seed).permutation(len(class_ids))
    minority = sorted(class_ids[j] for j in order[:n_minority])
    majority = sorted(set(class_ids) - set(minority))
    return majority, minority


def build_splits(index: AnnotationIndex, cfg: SplitConfig):
    """Returns ``(labeled_ids, unlabeled_ids, majority_ids, minority_ids)``."""
    if cfg.lvis_mode:
        labeled, unlabeled = lvis_split(index, cfg)
        return labeled, unlabeled, set(), set()
    d_m = build_majority_split(index, cfg)
    d_s = build_minority_split(index, cfg, d_m)
    labeled, unlabeled = assemble_splits(index, d_m, d_s)
    return labeled, unlabeled, d_m, d_s


AUDIT_FIELDS = [
    "category_id", "name", "group",
    "total_instances", "labeled_instances", "unlabeled_instances",
    "total_images", "labeled_images", "unlabeled_images",
]


def audit_rows(index: AnnotationIndex, labeled, cfg: SplitConfig):
    unlabeled = set(index.image_classes) - set(labeled)
    total_i, lab_i, unl_i = index.instance_counts(), index.instance_counts(labeled), index.instance_counts(unlabeled)
    total_m, lab_m, unl_m = index.image_counts(), index.image_counts(labeled), index.image_counts(unlabeled)
    majority, minority = set(cfg.majority), set(cfg.minority)
    for cat in sorted(index.categories, key=lambda c: c["id"]):
        c = cat["id"]
        group = "majority" if c in majority else "minority" if c in minority else "other"
        yield {
            "category_id": c, "name": cat["name"], "group": group,
            "total_instances": total_i[c], "labeled_instances": lab_i[c], "unlabeled_instances": unl_i[c],
            "total_images": total_m[c], "labeled_images": lab_m[c], "unlabeled_images": unl_m[c],
        }


def _dump(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")


def write_splits(index: AnnotationIndex, labeled, cfg: SplitConfig, out_dir, extra_meta=None) -> dict:
    """Write ``labeled.json``, ``unlabeled.json``, ``audit.csv`` and ``split_meta.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    labeled = set(labeled)
    _dump(out / "labeled.json", index.subset(labeled).to_coco())
    _dump(out / "unlabeled.json", {
        "images": [
            {"id": img["id"], "file_name": img.get("file_name", "")}
            for img in index.images if img["id"] not in labeled
        ]
    })
    with open(out / "audit.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=AUDIT_FIELDS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(audit_rows(index, labeled, cfg))
    meta = {
        "seed": cfg.seed,
        "fraction": cfg.fraction,
        "min_instances": cfg.min_instances,
        "lvis_mode": cfg.lvis_mode,
        "majority": sorted(cfg.majority),
        "minority": sorted(cfg.minority),
        "labeled_images": len(labeled),
        "unlabeled_images": len(index.images) - len(labeled),
        **(extra_meta or {}),
    }
    _dump(out / "split_meta.json", meta)
    return {name: out / name for name in ("labeled.json", "unlabeled.json", "audit.csv", "split_meta.json")}


def load_unlabeled(path) -> list:
    return json.loads(Path(path).read_text())["images"]
