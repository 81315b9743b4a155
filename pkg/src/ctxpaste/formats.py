"""On-disk formats: PNGs for pixels, JSON for everything structured.

Float rasters quantize to 8 bits with round(value * 255); category
rasters store the index directly in a grayscale PNG, which caps the
pipeline at 255 categories. JSON files are written with sorted keys and
a trailing newline so identical runs produce identical bytes.
"""

from __future__ import annotations

import json
import os
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .core import LabelSet, ObjectInstance, Raster, Sample
from .errors import ManifestError
from .harvester import InstanceBank
from .toycam import FEATURE_DIM, ToyModel

MANIFEST_VERSION = "1"
BANK_VERSION = "1"
MODEL_VERSION = "1"


def dump_json(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_json(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def write_color_png(path: str, raster: Raster) -> None:
    if raster.is_category or raster.channels != 3:
        raise ValueError("color PNGs need 3-channel float rasters")
    arr = np.round(raster.data * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def read_color_png(path: str) -> Raster:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64)
    return Raster(arr / 255.0)


def write_gray_png(path: str, raster: Raster) -> None:
    """Store a 1-channel float raster (alpha or heatmap) at 8 bits."""
    if raster.is_category or raster.channels != 1:
        raise ValueError("gray PNGs need 1-channel float rasters")
    arr = np.round(raster.channel(0) * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def read_gray_png(path: str) -> Raster:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"), dtype=np.float64)
    return Raster(arr / 255.0)


def write_category_png(path: str, raster: Raster) -> None:
    if not raster.is_category:
        raise ValueError("category PNGs need category rasters")
    arr = raster.channel(0)
    if arr.max(initial=0) > 255:
        raise ValueError("category PNGs support at most 255 categories")
    Image.fromarray(arr.astype(np.uint8), mode="L").save(path, format="PNG")


def read_category_png(path: str) -> Raster:
    with Image.open(path) as img:
        if img.mode != "L":
            raise ManifestError(f"{path}: category PNGs must be 8-bit gray")
        arr = np.asarray(img, dtype=np.int32)
    return Raster(arr)


def save_corpus(out_dir: str, samples: Sequence[Sample],
                category_names: Sequence[str],
                ids: Optional[Sequence[str]] = None) -> str:
    """Write images/, masks/, and manifest.json; returns the manifest path.

    ``category_names[0]`` names the background; entry ids default to
    scene_<index>.
    """
    if ids is None:
        ids = [f"scene_{i:05d}" for i in range(len(samples))]
    if len(ids) != len(samples):
        raise ValueError("ids must align one-to-one with samples")
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "masks"), exist_ok=True)
    entries = []
    for sid, sample in zip(ids, samples):
        image_rel = f"images/{sid}.png"
        write_color_png(os.path.join(out_dir, image_rel), sample.image)
        entry = {"id": sid, "image": image_rel,
                 "labels": sorted(sample.labels)}
        if sample.gt_mask is not None:
            mask_rel = f"masks/{sid}.png"
            write_category_png(os.path.join(out_dir, mask_rel),
                               sample.gt_mask)
            entry["gt_mask"] = mask_rel
        entries.append(entry)
    manifest = {"version": MANIFEST_VERSION,
                "categories": list(category_names),
                "entries": entries}
    path = os.path.join(out_dir, "manifest.json")
    dump_json(path, manifest)
    return path


def load_corpus(manifest_path: str
                ) -> Tuple[List[Sample], List[str], List[str]]:
    """Read a corpus back: (samples, ids, category_names).

    Violations of the documented layout raise ManifestError naming the
    offending entry and field.
    """
    try:
        manifest = load_json(manifest_path)
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read manifest: {exc}") from exc
    if not isinstance(manifest, dict) or "entries" not in manifest:
        raise ManifestError("manifest must be an object with 'entries'")
    if manifest.get("version") != MANIFEST_VERSION:
        raise ManifestError(
            f"unsupported manifest version {manifest.get('version')!r}")
    names = manifest.get("categories")
    if not isinstance(names, list) or not names:
        raise ManifestError("manifest needs a non-empty 'categories' list")
    base = os.path.dirname(os.path.abspath(manifest_path))
    samples: List[Sample] = []
    ids: List[str] = []
    seen = set()
    for i, entry in enumerate(manifest["entries"]):
        where = f"entry {i} ({entry.get('id', '?')})"
        for key in ("id", "image", "labels"):
            if key not in entry:
                raise ManifestError(f"{where}: missing {key!r}")
        labels = entry["labels"]
        if not all(isinstance(c, int) and 1 <= c < len(names)
                   for c in labels):
            raise ManifestError(
                f"{where}: labels must be indices into 'categories'")
        try:
            image = read_color_png(os.path.join(base, entry["image"]))
        except (OSError, ValueError) as exc:
            raise ManifestError(f"{where}: bad image: {exc}") from exc
        gt = None
        if "gt_mask" in entry:
            try:
                gt = read_category_png(os.path.join(base, entry["gt_mask"]))
            except (OSError, ValueError) as exc:
                raise ManifestError(f"{where}: bad gt_mask: {exc}") from exc
        try:
            samples.append(Sample(image, LabelSet(labels), gt))
        except ValueError as exc:
            raise ManifestError(f"{where}: {exc}") from exc
        sid = str(entry["id"])
        if sid in seen:
            raise ManifestError(f"{where}: duplicate id {sid!r}")
        seen.add(sid)
        ids.append(sid)
    return samples, ids, names


def save_masks(out_dir: str, ids: Sequence[str],
               masks: Sequence[Raster]) -> None:
    """Write predicted masks as <id>.png into a flat directory."""
    os.makedirs(out_dir, exist_ok=True)
    for sid, mask in zip(ids, masks):
        write_category_png(os.path.join(out_dir, f"{sid}.png"), mask)


def load_masks(mask_dir: str, ids: Sequence[str]) -> List[Raster]:
    masks = []
    for sid in ids:
        path = os.path.join(mask_dir, f"{sid}.png")
        if not os.path.exists(path):
            raise ManifestError(f"missing predicted mask {sid}.png")
        masks.append(read_category_png(path))
    return masks


def save_bank(out_dir: str, bank: InstanceBank) -> str:
    """Write bank.json plus per-instance RGB and alpha PNGs."""
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for i, inst in enumerate(bank.instances):
        iid = f"{i:05d}"
        rgb_rel = f"inst_{iid}_rgb.png"
        alpha_rel = f"inst_{iid}_alpha.png"
        write_color_png(os.path.join(out_dir, rgb_rel), inst.cutout)
        write_gray_png(os.path.join(out_dir, alpha_rel), inst.alpha)
        rows.append({"id": iid, "category": inst.category,
                     "source_id": inst.source_id,
                     "width": inst.width, "height": inst.height,
                     "rgb": rgb_rel, "alpha": alpha_rel})
    path = os.path.join(out_dir, "bank.json")
    dump_json(path, {"version": BANK_VERSION,
                     "provenance": _jsonable(bank.provenance),
                     "instances": rows})
    return path


def load_bank(bank_dir: str) -> InstanceBank:
    path = os.path.join(bank_dir, "bank.json")
    try:
        data = load_json(path)
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read bank: {exc}") from exc
    if data.get("version") != BANK_VERSION:
        raise ManifestError(
            f"unsupported bank version {data.get('version')!r}")
    instances = []
    for i, row in enumerate(data.get("instances", [])):
        where = f"bank instance {i}"
        try:
            cutout = read_color_png(os.path.join(bank_dir, row["rgb"]))
            alpha = read_gray_png(os.path.join(bank_dir, row["alpha"]))
            instances.append(ObjectInstance(cutout, alpha,
                                            int(row["category"]),
                                            str(row.get("source_id", ""))))
        except (OSError, KeyError, ValueError) as exc:
            raise ManifestError(f"{where}: {exc}") from exc
        if (instances[-1].width, instances[-1].height) != \
                (int(row.get("width", instances[-1].width)),
                 int(row.get("height", instances[-1].height))):
            raise ManifestError(f"{where}: recorded dimensions disagree "
                                f"with the PNGs")
    if not instances:
        raise ManifestError("bank holds no instances")
    return InstanceBank.build(instances, data.get("provenance", {}))


def save_model(path: str, model: ToyModel,
               extra: Optional[Dict[str, object]] = None) -> None:
    payload = {"version": MODEL_VERSION,
               "feature_dim": FEATURE_DIM,
               "weights": model.weights.tolist(),
               "bias": model.bias.tolist(),
               "step_size": model.step_size,
               "epochs": model.epochs}
    if extra:
        payload["extra"] = _jsonable(extra)
    dump_json(path, payload)


def load_model(path: str) -> ToyModel:
    try:
        data = load_json(path)
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read model: {exc}") from exc
    if data.get("version") != MODEL_VERSION:
        raise ManifestError(
            f"unsupported model version {data.get('version')!r}")
    try:
        return ToyModel(np.asarray(data["weights"], dtype=np.float64),
                        np.asarray(data["bias"], dtype=np.float64),
                        float(data["step_size"]), int(data["epochs"]))
    except (KeyError, ValueError) as exc:
        raise ManifestError(f"bad model file: {exc}") from exc


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj
