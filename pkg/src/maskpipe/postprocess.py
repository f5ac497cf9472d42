"""Score-map thresholding and blob-level mask cleanup.

Raw per-pixel segmentation output typically contains small spurious
regions.  The functions here turn a score map into per-class binary
masks and remove those regions by connected-component analysis:
``argmax_label_map`` -> ``extract_class_mask`` -> ``connected_components``
-> ``filter_blobs`` (optionally ``fill_holes``), or ``clean_mask`` /
``score_map_to_masks`` for the composed steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import BackgroundClassRequestedError, ChannelMismatchError
from .tensor_io import BinaryMask, LabelMap, ScoreMap

__all__ = [
    "Blob",
    "FilterPolicy",
    "argmax_label_map",
    "extract_class_mask",
    "connected_components",
    "filter_blobs",
    "fill_holes",
    "clean_mask",
    "score_map_to_masks",
]

_STRUCTURE_4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
_STRUCTURE_8 = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class Blob:
    """One connected foreground component.

    ``label`` counts from 1 in raster-scan order of each component's
    first pixel, so a decomposition is reproducible across runs.
    ``bbox`` is the tight (x, y, w, h) bound of ``pixels``.
    """

    label: int
    area: int
    bbox: tuple[int, int, int, int]
    pixels: frozenset[tuple[int, int]]


@dataclass(frozen=True)
class FilterPolicy:
    """Knobs for removing interfering subregions from a raw mask.

    min_area drops blobs below a pixel count; keep_largest keeps only
    the K largest surviving blobs (ties broken by lower label).
    """

    min_area: int = 100
    keep_largest: int | None = None
    connectivity: int = 8
    fill_holes: bool = False

    def __post_init__(self):
        if self.min_area < 0:
            raise ValueError("min_area must be >= 0")
        if self.keep_largest is not None and self.keep_largest < 1:
            raise ValueError("keep_largest must be >= 1 when set")
        if self.connectivity not in (4, 8):
            raise ValueError("connectivity must be 4 or 8")


def argmax_label_map(scores: ScoreMap, threshold: float = 0.5) -> LabelMap:
    """Assign each pixel the class of its highest score.

    Ties go to the lowest channel index.  A pixel whose winning score is
    below ``threshold`` is forced to background (0); pass ``threshold=0``
    to disable thresholding, e.g. for logit-valued maps.
    """
    if scores.channels < 2:
        raise ChannelMismatchError(
            f"need >= 2 channels (background + classes), got {scores.channels}"
        )
    if scores.channels > 256:
        raise ChannelMismatchError(
            f"{scores.channels} channels exceed the 255-class label range"
        )
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    labels = np.argmax(scores.data, axis=2).astype(np.uint8)
    winning = np.max(scores.data, axis=2)
    labels[winning < threshold] = 0
    return LabelMap(labels)


def extract_class_mask(labels: LabelMap, class_id: int) -> BinaryMask:
    """Binary mask of the pixels labeled ``class_id`` (>= 1)."""
    if class_id == 0:
        raise BackgroundClassRequestedError("class 0 is the background, not a mask")
    if class_id < 0:
        raise ValueError("class_id must be >= 1")
    return BinaryMask(labels.data == class_id)


def connected_components(mask: BinaryMask, connectivity: int = 8) -> list[Blob]:
    """Decompose the foreground into blobs under 4- or 8-adjacency.

    The returned blobs partition the foreground; labels are assigned
    from 1 in raster-scan order of each blob's first pixel.
    """
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    structure = _STRUCTURE_8 if connectivity == 8 else _STRUCTURE_4
    labeled, count = ndimage.label(mask.data, structure=structure)
    if count == 0:
        return []
    flat = labeled.ravel()
    ids, first_seen = np.unique(flat, return_index=True)
    order = [(first_seen[i], ids[i]) for i in range(len(ids)) if ids[i] != 0]
    order.sort()
    blobs = []
    for new_label, (_, raw_id) in enumerate(order, start=1):
        coords = np.argwhere(labeled == raw_id)
        rows, cols = coords[:, 0], coords[:, 1]
        bbox = (
            int(cols.min()),
            int(rows.min()),
            int(cols.max() - cols.min() + 1),
            int(rows.max() - rows.min() + 1),
        )
        blobs.append(
            Blob(
                label=new_label,
                area=len(coords),
                bbox=bbox,
                pixels=frozenset((int(r), int(c)) for r, c in coords),
            )
        )
    return blobs


def filter_blobs(
    blobs: list[Blob],
    mask_dims: tuple[int, int],
    policy: FilterPolicy,
) -> BinaryMask:
    """Union of the blobs that survive the policy's area and count rules.

    A blob survives iff area >= min_area; if keep_largest is set, only
    the K largest survivors remain (area ties keep the lower label).
    """
    survivors = [b for b in blobs if b.area >= policy.min_area]
    if policy.keep_largest is not None:
        survivors.sort(key=lambda b: (-b.area, b.label))
        survivors = survivors[: policy.keep_largest]
    height, width = mask_dims
    out = np.zeros((height, width), dtype=bool)
    for blob in survivors:
        rows, cols = zip(*blob.pixels)
        out[list(rows), list(cols)] = True
    return BinaryMask(out)


def fill_holes(mask: BinaryMask) -> BinaryMask:
    """Fill background regions not 4-connected to the image border."""
    return BinaryMask(ndimage.binary_fill_holes(mask.data))


def clean_mask(mask: BinaryMask, policy: FilterPolicy) -> BinaryMask:
    """Apply the full cleanup: blob filtering, then optional hole filling."""
    blobs = connected_components(mask, policy.connectivity)
    cleaned = filter_blobs(blobs, (mask.height, mask.width), policy)
    if policy.fill_holes:
        cleaned = fill_holes(cleaned)
    return cleaned


def score_map_to_masks(
    scores: ScoreMap,
    threshold: float = 0.5,
    policy: FilterPolicy | None = None,
) -> dict[int, BinaryMask]:
    """Threshold, split per class, and clean; classes cleaned to empty are dropped."""
    policy = policy or FilterPolicy()
    labels = argmax_label_map(scores, threshold)
    present = sorted(int(c) for c in np.unique(labels.data) if c != 0)
    masks: dict[int, BinaryMask] = {}
    for class_id in present:
        cleaned = clean_mask(extract_class_mask(labels, class_id), policy)
        if cleaned.area > 0:
            masks[class_id] = cleaned
    return masks
