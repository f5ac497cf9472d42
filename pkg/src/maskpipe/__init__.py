"""maskpipe: segmentation score-map post-processing and annotation toolkit.

Turns per-pixel class score maps into cleaned binary masks and
COCO-style annotation documents, evaluates detection/segmentation
quality with IoU and mAP, and provides reference RoIAlign/RoIPool
kernels.  See the ``maskpipe`` CLI for the file-based pipeline.
"""

from .annotate import (
    Annotation,
    AnnotationDoc,
    Category,
    ImageInfo,
    Rle,
    bbox_of_mask,
    build_annotations,
    polygons_to_mask,
    read_annotation_doc,
    rle_decode,
    rle_encode,
    segmentation_to_mask,
    trace_polygons,
    write_annotation_doc,
)
from .evaluation import (
    Detection,
    EvalResult,
    MatchOutcome,
    average_precision,
    bbox_iou,
    evaluate,
    mask_iou,
    match_detections,
    mean_ap,
)
from .pooling import FeatureMap, PoolSpec, Roi, bilinear_sample, roi_align, roi_pool
from .postprocess import (
    Blob,
    FilterPolicy,
    argmax_label_map,
    clean_mask,
    connected_components,
    extract_class_mask,
    fill_holes,
    filter_blobs,
    score_map_to_masks,
)
from .tensor_io import (
    BinaryMask,
    LabelMap,
    ScoreMap,
    read_mask_pgm,
    read_tensor,
    write_mask_pgm,
    write_tensor,
)

__version__ = "0.1.0"

__all__ = [
    "Annotation",
    "AnnotationDoc",
    "BinaryMask",
    "Blob",
    "Category",
    "Detection",
    "EvalResult",
    "FeatureMap",
    "FilterPolicy",
    "ImageInfo",
    "LabelMap",
    "MatchOutcome",
    "PoolSpec",
    "Rle",
    "Roi",
    "ScoreMap",
    "argmax_label_map",
    "average_precision",
    "bbox_iou",
    "bbox_of_mask",
    "bilinear_sample",
    "build_annotations",
    "clean_mask",
    "connected_components",
    "evaluate",
    "extract_class_mask",
    "fill_holes",
    "filter_blobs",
    "mask_iou",
    "match_detections",
    "mean_ap",
    "polygons_to_mask",
    "read_annotation_doc",
    "read_mask_pgm",
    "read_tensor",
    "rle_decode",
    "rle_encode",
    "roi_align",
    "roi_pool",
    "score_map_to_masks",
    "segmentation_to_mask",
    "trace_polygons",
    "write_annotation_doc",
    "write_mask_pgm",
    "write_tensor",
]
