"""Manifest-driven batch extraction into an EMBX file.

Images are square-resized to 256, center-cropped to 224, and normalized
with ImageNet statistics; everything runs in eval mode with gradients off,
so extraction is deterministic. Vectors are written in manifest order.
"""

import csv
import os
from dataclasses import dataclass, field

import numpy as np
import torch
from PIL import Image

from .backbones import EXPECTED_DIMS, CheckpointError, build_embedder
from .embx import write_embx

IMAGENET_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
IMAGENET_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


class ManifestError(Exception):
    pass


@dataclass
class ExtractionJob:
    """One backbone's share of an extraction run."""

    model_id: str  # simclr | swav | dino
    checkpoint: str
    device: str = "cpu"
    vit_options: dict = field(default_factory=dict)

    @property
    def expected_dim(self):
        return EXPECTED_DIMS[self.model_id]


def read_manifest(path):
    """Rows of (image path, int label, optional int group id).

    Comma- or tab-separated; image paths resolve relative to the manifest.
    """
    base = os.path.dirname(os.path.abspath(path))
    rows = []
    with open(path, newline="") as fh:
        delimiter = "\t" if "\t" in fh.readline() else ","
        fh.seek(0)
        for line_no, row in enumerate(csv.reader(fh, delimiter=delimiter), start=1):
            row = [cell.strip() for cell in row if cell.strip() != ""]
            if not row:
                continue
            if len(row) not in (2, 3):
                raise ManifestError(f"line {line_no}: expected 2 or 3 fields, got {len(row)}")
            image = row[0]
            if not os.path.isabs(image):
                image = os.path.join(base, image)
            try:
                label = int(row[1])
                group = int(row[2]) if len(row) == 3 else None
            except ValueError as exc:
                raise ManifestError(f"line {line_no}: {exc}") from exc
            rows.append((image, label, group))
    if not rows:
        raise ManifestError(f"{path}: no entries")
    groups = [g for _, _, g in rows]
    if any(g is None for g in groups) and any(g is not None for g in groups):
        raise ManifestError("group ids must be present on all rows or none")
    return rows


def load_image_tensor(path):
    """256x256 resize, 224 center crop, ImageNet normalization; CHW float32."""
    try:
        with Image.open(path) as img:
            resized = img.convert("RGB").resize((256, 256), Image.BILINEAR)
    except OSError as exc:
        raise ManifestError(f"unreadable image {path}: {exc}") from exc
    cropped = resized.crop((16, 16, 240, 240))  # central 224x224
    array = np.asarray(cropped, dtype=np.float32) / 255.0
    array = (array - IMAGENET_MEAN) / IMAGENET_STD
    return torch.from_numpy(array.transpose(2, 0, 1))


def _embed_all(job, image_paths, batch_size):
    embedder = build_embedder(job.model_id, job.checkpoint, job.device, job.vit_options)
    chunks = []
    for start in range(0, len(image_paths), batch_size):
        batch = torch.stack(
            [load_image_tensor(p) for p in image_paths[start : start + batch_size]]
        ).to(job.device)
        chunks.append(embedder.embed(batch).cpu().numpy().astype(np.float32))
    vectors = np.concatenate(chunks, axis=0)
    if vectors.shape[1] != job.expected_dim:
        raise CheckpointError(
            f"{job.model_id} produced {vectors.shape[1]}-d vectors, "
            f"EMBX header requires {job.expected_dim}"
        )
    return vectors


def run_extraction(jobs, manifest_path, out_path, batch_size=16):
    """Run every job over the manifest and write one multi-source EMBX file."""
    if len({job.model_id for job in jobs}) != len(jobs):
        raise ManifestError("duplicate model ids in one extraction run")
    rows = read_manifest(manifest_path)
    image_paths = [r[0] for r in rows]
    labels = [r[1] for r in rows]
    groups = None if rows[0][2] is None else [r[2] for r in rows]

    sources = []
    features = {}
    for job in jobs:
        features[job.model_id] = _embed_all(job, image_paths, batch_size)
        sources.append((job.model_id, job.expected_dim))

    num_classes = max(labels) + 1
    write_embx(out_path, sources, num_classes, labels, features, group_ids=groups)
    return {"samples": len(rows), "sources": sources, "num_classes": num_classes}
