"""COCO-style annotation construction and serialization.

Cleaned masks become training annotations: each mask is encoded as an
uncompressed run-length segmentation (or, optionally, traced into
boundary polygons), paired with its tight bounding box and pixel area,
and collected into a document of images / annotations / categories.

RLE convention: pixels in column-major order, counts alternating
background/foreground, the first count being the leading background
run (possibly 0).  Area and bbox are always computed from the decoded
segmentation, so they hold exactly in both segmentation modes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    CountSumMismatchError,
    DimsMismatchError,
    DuplicateIdError,
    EmptyMaskError,
    ParseError,
    ReferentialIntegrityError,
)
from .postprocess import connected_components
from .tensor_io import BinaryMask

__all__ = [
    "Rle",
    "ImageInfo",
    "Category",
    "Annotation",
    "AnnotationDoc",
    "rle_encode",
    "rle_decode",
    "bbox_of_mask",
    "trace_polygons",
    "polygons_to_mask",
    "segmentation_to_mask",
    "build_annotations",
    "write_annotation_doc",
    "read_annotation_doc",
]

Polygon = list[float]  # flat [x1, y1, x2, y2, ...] on the pixel-corner lattice


@dataclass(frozen=True)
class Rle:
    """Uncompressed column-major run-length encoding of a binary mask."""

    size: tuple[int, int]  # (height, width)
    counts: tuple[int, ...]

    def __post_init__(self):
        height, width = self.size
        if height < 1 or width < 1:
            raise ValueError(f"RLE size must be positive, got {self.size}")
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        if not self.counts:
            raise ValueError("RLE counts must not be empty")
        if any(c < 0 for c in self.counts):
            raise ValueError("RLE counts must be non-negative")
        if any(c == 0 for c in self.counts[1:]):
            raise ValueError("only the leading RLE count may be zero")


@dataclass(frozen=True)
class ImageInfo:
    id: int
    file_name: str
    height: int
    width: int


@dataclass(frozen=True)
class Category:
    id: int
    name: str


@dataclass(frozen=True)
class Annotation:
    """One object instance: segmentation plus label bookkeeping.

    ``area`` and ``bbox`` describe the decoded segmentation exactly.
    ``score`` is absent on training annotations and required on
    detector predictions fed to the evaluator.
    """

    id: int
    image_id: int
    category_id: int
    segmentation: Rle | list[Polygon]
    area: int
    bbox: tuple[float, float, float, float]
    iscrowd: int = 0
    score: float | None = None


@dataclass
class AnnotationDoc:
    images: list[ImageInfo] = field(default_factory=list)
    annotations: list[Annotation] = field(default_factory=list)
    categories: list[Category] = field(default_factory=list)

    def validate(self) -> None:
        """Check id uniqueness and referential integrity."""
        for kind, ids in (
            ("image", [im.id for im in self.images]),
            ("annotation", [a.id for a in self.annotations]),
            ("category", [c.id for c in self.categories]),
        ):
            seen: set[int] = set()
            for i in ids:
                if i in seen:
                    raise DuplicateIdError(f"duplicate {kind} id {i}")
                seen.add(i)
        image_ids = {im.id for im in self.images}
        category_ids = {c.id for c in self.categories}
        for ann in self.annotations:
            if ann.image_id not in image_ids:
                raise ReferentialIntegrityError(
                    f"annotation {ann.id} references missing image {ann.image_id}"
                )
            if ann.category_id not in category_ids:
                raise ReferentialIntegrityError(
                    f"annotation {ann.id} references missing category {ann.category_id}"
                )


# --- run-length encoding --------------------------------------------------

def rle_encode(mask: BinaryMask) -> Rle:
    """Encode a mask as column-major alternating background/foreground runs."""
    flat = mask.data.ravel(order="F")
    n = flat.size
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    boundaries = np.concatenate(([0], changes, [n]))
    counts = np.diff(boundaries).tolist()
    if flat[0]:
        counts = [0] + counts
    return Rle(size=(mask.height, mask.width), counts=tuple(counts))


def rle_decode(rle: Rle) -> BinaryMask:
    """Exact inverse of :func:`rle_encode`."""
    height, width = rle.size
    total = sum(rle.counts)
    if total != height * width:
        raise CountSumMismatchError(
            f"counts sum to {total}, raster has {height * width} pixels"
        )
    values = np.zeros(len(rle.counts), dtype=bool)
    values[1::2] = True
    flat = np.repeat(values, rle.counts)
    return BinaryMask(flat.reshape((height, width), order="F"))


def bbox_of_mask(mask: BinaryMask) -> tuple[int, int, int, int]:
    """Tight (x, y, w, h) bound of the foreground, in pixels."""
    rows = np.flatnonzero(mask.data.any(axis=1))
    if rows.size == 0:
        raise EmptyMaskError("bbox of an empty mask is undefined")
    cols = np.flatnonzero(mask.data.any(axis=0))
    return (
        int(cols[0]),
        int(rows[0]),
        int(cols[-1] - cols[0] + 1),
        int(rows[-1] - rows[0] + 1),
    )


# --- polygon tracing ------------------------------------------------------

def _blob_boundary_edges(pixels: frozenset[tuple[int, int]]):
    """Directed crack edges of a pixel set, foreground kept on the inside.

    Edge direction follows the orientation that makes outer boundaries
    come out with positive shoelace area: +x along the top of a pixel,
    +y along its right, -x along the bottom, -y along its left.
    """
    edges = []
    for r, c in pixels:
        if (r - 1, c) not in pixels:
            edges.append(((c, r), (c + 1, r), (r, c)))
        if (r, c + 1) not in pixels:
            edges.append(((c + 1, r), (c + 1, r + 1), (r, c)))
        if (r + 1, c) not in pixels:
            edges.append(((c + 1, r + 1), (c, r + 1), (r, c)))
        if (r, c - 1) not in pixels:
            edges.append(((c, r + 1), (c, r), (r, c)))
    return edges


def _stitch_cycles(edges) -> list[list[tuple[int, int]]]:
    """Chain directed crack edges into closed vertex cycles.

    At a corner where two foreground pixels touch diagonally, four
    edges meet; the walk crosses over to the other pixel there, which
    keeps an 8-connected blob's outline in one piece.
    """
    by_start: dict[tuple[int, int], list[int]] = {}
    for idx, (start, _end, _pix) in enumerate(edges):
        by_start.setdefault(start, []).append(idx)
    used = [False] * len(edges)
    cycles = []
    for first in sorted(range(len(edges)), key=lambda i: edges[i][:2]):
        if used[first]:
            continue
        cycle = [edges[first][0]]
        current = first
        used[first] = True
        while True:
            _start, end, pixel = edges[current]
            candidates = by_start[end]
            if len(candidates) == 1:
                nxt = candidates[0]
            else:
                others = [i for i in candidates if edges[i][2] != pixel]
                nxt = others[0]
            if nxt == first:
                break
            used[nxt] = True
            cycle.append(edges[nxt][0])
            current = nxt
        cycles.append(cycle)
    return cycles


def _signed_area(cycle: list[tuple[int, int]]) -> float:
    total = 0
    for (x0, y0), (x1, y1) in zip(cycle, cycle[1:] + cycle[:1]):
        total += x0 * y1 - x1 * y0
    return total / 2.0


def _simplify_cycle(cycle: list[tuple[int, int]]) -> list[tuple[int, int]]:
    """Drop vertices interior to straight runs, keeping only corners."""
    n = len(cycle)
    kept = []
    for i, vertex in enumerate(cycle):
        px, py = cycle[i - 1]
        nx, ny = cycle[(i + 1) % n]
        d_in = (vertex[0] - px, vertex[1] - py)
        d_out = (nx - vertex[0], ny - vertex[1])
        if d_in != d_out:
            kept.append(vertex)
    start = min(range(len(kept)), key=lambda i: (kept[i][1], kept[i][0]))
    return kept[start:] + kept[:start]


def trace_polygons(mask: BinaryMask) -> list[list[tuple[float, float]]]:
    """Outer boundary polygon of each blob, on the pixel-corner lattice.

    Returns one closed counterclockwise polygon (positive shoelace
    area, no repeated closing vertex) per 8-connected blob; interior
    holes are ignored.
    """
    polygons = []
    for blob in connected_components(mask, connectivity=8):
        edges = _blob_boundary_edges(blob.pixels)
        for cycle in _stitch_cycles(edges):
            if _signed_area(cycle) <= 0:
                continue  # hole rim
            simplified = _simplify_cycle(cycle)
            polygons.append([(float(x), float(y)) for x, y in simplified])
    return polygons


def polygons_to_mask(polygons: Sequence[Polygon], height: int, width: int) -> BinaryMask:
    """Rasterize flat-coordinate polygons (even-odd rule, pixel centers)."""
    out = np.zeros((height, width), dtype=bool)
    cx = np.arange(width) + 0.5
    cy = np.arange(height) + 0.5
    for flat in polygons:
        if len(flat) < 6 or len(flat) % 2 != 0:
            raise ValueError("polygon needs an even number of >= 6 coordinates")
        xs = np.asarray(flat[0::2], dtype=float)
        ys = np.asarray(flat[1::2], dtype=float)
        crossings = np.zeros((height, width), dtype=np.int32)
        for (x0, y0, x1, y1) in zip(xs, ys, np.roll(xs, -1), np.roll(ys, -1)):
            if y0 == y1:
                continue
            lo, hi = (y0, y1) if y0 < y1 else (y1, y0)
            rows = np.flatnonzero((cy >= lo) & (cy < hi))
            if rows.size == 0:
                continue
            x_hit = x0 + (cy[rows] - y0) * (x1 - x0) / (y1 - y0)
            crossings[rows] += x_hit[:, None] > cx[None, :]
        out |= crossings % 2 == 1
    return BinaryMask(out)


def _flatten(polygon: list[tuple[float, float]]) -> Polygon:
    flat: Polygon = []
    for x, y in polygon:
        flat.extend((float(x), float(y)))
    return flat


def segmentation_to_mask(
    segmentation: Rle | Sequence[Polygon], height: int, width: int
) -> BinaryMask:
    """Decode either segmentation representation to a mask of the given dims."""
    if isinstance(segmentation, Rle):
        if segmentation.size != (height, width):
            raise DimsMismatchError(
                f"RLE size {segmentation.size} != image dims {(height, width)}"
            )
        return rle_decode(segmentation)
    return polygons_to_mask(segmentation, height, width)


# --- document assembly ----------------------------------------------------

def build_annotations(
    masks: Sequence[tuple[tuple[str, int, int], int, BinaryMask]],
    mode: str = "rle",
    categories: Mapping[int, str] | None = None,
) -> AnnotationDoc:
    """Assemble an annotation document from per-instance masks.

    ``masks`` holds (image, category_id, mask) triples where image is
    (file_name, height, width); triples naming the same file share one
    image entry.  Annotation and image ids are assigned sequentially
    from 1 in input order.  When ``categories`` is not given, names are
    synthesized from the category ids that occur.
    """
    if mode not in ("rle", "polygon"):
        raise ValueError(f"mode must be 'rle' or 'polygon', got {mode!r}")
    images: dict[str, ImageInfo] = {}
    annotations: list[Annotation] = []
    used_categories: set[int] = set()
    for (file_name, height, width), category_id, mask in masks:
        if category_id < 1:
            raise ValueError(f"category_id must be >= 1, got {category_id}")
        if (mask.height, mask.width) != (height, width):
            raise DimsMismatchError(
                f"mask is {mask.height}x{mask.width} but image {file_name!r} "
                f"is {height}x{width}"
            )
        if mask.area == 0:
            raise EmptyMaskError(f"empty mask for image {file_name!r}")
        info = images.get(file_name)
        if info is None:
            info = ImageInfo(len(images) + 1, file_name, height, width)
            images[file_name] = info
        elif (info.height, info.width) != (height, width):
            raise DimsMismatchError(f"conflicting dims declared for {file_name!r}")
        if mode == "rle":
            segmentation: Rle | list[Polygon] = rle_encode(mask)
        else:
            segmentation = [_flatten(p) for p in trace_polygons(mask)]
        decoded = segmentation_to_mask(segmentation, height, width)
        x, y, w, h = bbox_of_mask(decoded)
        annotations.append(
            Annotation(
                id=len(annotations) + 1,
                image_id=info.id,
                category_id=category_id,
                segmentation=segmentation,
                area=decoded.area,
                bbox=(float(x), float(y), float(w), float(h)),
            )
        )
        used_categories.add(category_id)
    if categories is None:
        category_list = [Category(cid, f"class_{cid}") for cid in sorted(used_categories)]
    else:
        missing = used_categories - set(categories)
        if missing:
            raise ReferentialIntegrityError(
                f"category ids {sorted(missing)} missing from the category table"
            )
        category_list = [Category(int(cid), str(categories[cid])) for cid in sorted(categories)]
    doc = AnnotationDoc(list(images.values()), annotations, category_list)
    doc.validate()
    return doc


# --- JSON serialization ---------------------------------------------------

def _segmentation_to_json(segmentation: Rle | list[Polygon]):
    if isinstance(segmentation, Rle):
        return {"size": list(segmentation.size), "counts": list(segmentation.counts)}
    return [list(p) for p in segmentation]


def _doc_to_json(doc: AnnotationDoc) -> dict:
    annotations = []
    for a in doc.annotations:
        entry = {
            "id": a.id,
            "image_id": a.image_id,
            "category_id": a.category_id,
            "segmentation": _segmentation_to_json(a.segmentation),
            "area": a.area,
            "bbox": [float(v) for v in a.bbox],
            "iscrowd": a.iscrowd,
        }
        if a.score is not None:
            entry["score"] = float(a.score)
        annotations.append(entry)
    return {
        "images": [
            {"id": im.id, "file_name": im.file_name, "height": im.height, "width": im.width}
            for im in doc.images
        ],
        "annotations": annotations,
        "categories": [{"id": c.id, "name": c.name} for c in doc.categories],
    }


def write_annotation_doc(doc: AnnotationDoc, path: str | Path) -> None:
    """Write the document as deterministic, UTF-8 JSON."""
    text = json.dumps(_doc_to_json(doc), indent=2, ensure_ascii=False) + "\n"
    Path(path).write_text(text, encoding="utf-8")


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ParseError(message)


def _as_int(value, what: str) -> int:
    _require(isinstance(value, int) and not isinstance(value, bool), f"{what} must be an integer")
    return value


def _as_number(value, what: str) -> float:
    _require(
        isinstance(value, (int, float)) and not isinstance(value, bool),
        f"{what} must be a number",
    )
    return float(value)


def _segmentation_from_json(raw, what: str) -> Rle | list[Polygon]:
    if isinstance(raw, dict):
        _require(set(raw) == {"size", "counts"}, f"{what}: RLE needs exactly size and counts")
        size = raw["size"]
        _require(isinstance(size, list) and len(size) == 2, f"{what}: RLE size must be [H, W]")
        counts = raw["counts"]
        _require(isinstance(counts, list) and counts, f"{what}: RLE counts must be a list")
        try:
            return Rle(
                size=(_as_int(size[0], f"{what} height"), _as_int(size[1], f"{what} width")),
                counts=tuple(_as_int(c, f"{what} count") for c in counts),
            )
        except ValueError as exc:
            raise ParseError(f"{what}: {exc}") from exc
    _require(isinstance(raw, list) and raw, f"{what}: segmentation must be RLE or polygons")
    polygons: list[Polygon] = []
    for poly in raw:
        _require(
            isinstance(poly, list) and len(poly) >= 6 and len(poly) % 2 == 0,
            f"{what}: polygon must be a flat list of >= 6 coordinates",
        )
        polygons.append([_as_number(v, f"{what} coordinate") for v in poly])
    return polygons


def read_annotation_doc(path: str | Path, require_scores: bool = False) -> AnnotationDoc:
    """Parse and fully validate an annotation document.

    Checks the JSON layout, id uniqueness, referential integrity, and
    that each annotation's area and bbox match its decoded segmentation.
    With ``require_scores`` every annotation must carry a score field.
    """
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON in {path}: {exc}") from exc
    _require(isinstance(raw, dict), "document must be a JSON object")
    for key in ("images", "annotations", "categories"):
        _require(isinstance(raw.get(key), list), f"document needs a list under {key!r}")

    images = []
    for entry in raw["images"]:
        _require(isinstance(entry, dict), "image entry must be an object")
        images.append(
            ImageInfo(
                id=_as_int(entry.get("id"), "image id"),
                file_name=entry.get("file_name", ""),
                height=_as_int(entry.get("height"), "image height"),
                width=_as_int(entry.get("width"), "image width"),
            )
        )
        _require(isinstance(images[-1].file_name, str), "image file_name must be a string")

    categories = []
    for entry in raw["categories"]:
        _require(isinstance(entry, dict), "category entry must be an object")
        name = entry.get("name")
        _require(isinstance(name, str), "category name must be a string")
        categories.append(Category(id=_as_int(entry.get("id"), "category id"), name=name))

    annotations = []
    for entry in raw["annotations"]:
        _require(isinstance(entry, dict), "annotation entry must be an object")
        ann_id = _as_int(entry.get("id"), "annotation id")
        what = f"annotation {ann_id}"
        bbox = entry.get("bbox")
        _require(isinstance(bbox, list) and len(bbox) == 4, f"{what}: bbox must be [x, y, w, h]")
        iscrowd = _as_int(entry.get("iscrowd", 0), f"{what} iscrowd")
        _require(iscrowd == 0, f"{what}: only iscrowd 0 is supported")
        area = entry.get("area")
        if isinstance(area, float) and area.is_integer():
            area = int(area)
        score = entry.get("score")
        if score is not None:
            score = _as_number(score, f"{what} score")
        elif require_scores:
            raise ParseError(f"{what}: missing required score")
        annotations.append(
            Annotation(
                id=ann_id,
                image_id=_as_int(entry.get("image_id"), f"{what} image_id"),
                category_id=_as_int(entry.get("category_id"), f"{what} category_id"),
                segmentation=_segmentation_from_json(entry.get("segmentation"), what),
                area=_as_int(area, f"{what} area"),
                bbox=tuple(_as_number(v, f"{what} bbox value") for v in bbox),
                iscrowd=iscrowd,
                score=score,
            )
        )

    doc = AnnotationDoc(images, annotations, categories)
    doc.validate()

    image_by_id = {im.id: im for im in doc.images}
    for ann in doc.annotations:
        image = image_by_id[ann.image_id]
        try:
            decoded = segmentation_to_mask(ann.segmentation, image.height, image.width)
        except (CountSumMismatchError, DimsMismatchError, ValueError) as exc:
            raise ParseError(f"annotation {ann.id}: bad segmentation: {exc}") from exc
        _require(decoded.area > 0, f"annotation {ann.id}: segmentation decodes to nothing")
        _require(
            decoded.area == ann.area,
            f"annotation {ann.id}: area {ann.area} != decoded foreground {decoded.area}",
        )
        tight = tuple(float(v) for v in bbox_of_mask(decoded))
        _require(
            tight == ann.bbox,
            f"annotation {ann.id}: bbox {ann.bbox} != tight bbox {tight}",
        )
    return doc
