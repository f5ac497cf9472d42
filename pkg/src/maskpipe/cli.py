"""Batch command-line front end.

Four subcommands cover the file-based pipeline: ``postprocess`` turns
MFT score maps into cleaned per-class PGM masks, ``annotate`` collects
masks into a COCO-style JSON document, ``eval`` scores predictions
against ground truth, and ``roialign`` runs the pooling kernels over an
ROI list.

Every subcommand accepts ``--config FILE`` (flat ``key=value`` lines,
keys named after the long flags) with explicit flags winning, and
``--dry-run`` to echo the merged configuration instead of running.
Exit status: 0 success, 2 bad input data, 3 usage or flag errors.
Diagnostics go to standard error.
"""

from __future__ import annotations

import argparse
import json
import re
import sys
from dataclasses import dataclass
from pathlib import Path

from . import annotate as anno
from . import postprocess as post
from .errors import MaskPipeError
from .evaluation import evaluate
from .pooling import FeatureMap, PoolSpec, Roi, roi_align, roi_pool
from .tensor_io import ScoreMap, read_mask_pgm, read_tensor, write_mask_pgm, write_tensor

__all__ = ["main", "entrypoint"]

_MASK_NAME = re.compile(r"^(?P<stem>.+)_c(?P<cls>[1-9][0-9]*)\.pgm$")


class _UsageError(Exception):
    """Bad flags, bad flag values, or a bad config file: exit 3."""


class _DataError(Exception):
    """Unreadable or malformed input data: exit 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits 2; the CLI reserves 2 for data
        self.print_usage(sys.stderr)
        self.exit(3, f"{self.prog}: error: {message}\n")


def _parse_bool(text: str) -> bool:
    if text == "true":
        return True
    if text == "false":
        return False
    raise ValueError(f"expected true or false, got {text!r}")


@dataclass(frozen=True)
class _Opt:
    key: str
    kind: type
    default: object = None
    required: bool = False
    choices: tuple | None = None
    help: str = ""

    def convert(self, text: str):
        try:
            value = _parse_bool(text) if self.kind is bool else self.kind(text)
        except ValueError as exc:
            raise _UsageError(f"bad value for {self.key!r}: {exc}") from exc
        if self.choices and value not in self.choices:
            raise _UsageError(f"{self.key!r} must be one of {self.choices}, got {value!r}")
        return value


_OPTIONS: dict[str, list[_Opt]] = {
    "postprocess": [
        _Opt("scores", str, required=True, help="MFT score map file or directory"),
        _Opt("out-masks", str, required=True, help="output directory for PGM masks"),
        _Opt("threshold", float, 0.5, help="argmax score threshold (0 disables)"),
        _Opt("min-area", int, 100, help="drop blobs below this pixel area"),
        _Opt("keep-largest", int, help="keep only the K largest blobs"),
        _Opt("connectivity", int, 8, choices=(4, 8), help="blob adjacency"),
        _Opt("fill-holes", bool, False, help="fill enclosed background"),
    ],
    "annotate": [
        _Opt("masks", str, required=True, help="directory of <stem>_c<class>.pgm masks"),
        _Opt("image-meta", str, required=True, help="lines stem,file_name,height,width"),
        _Opt("categories", str, required=True, help="lines id,name"),
        _Opt("out", str, required=True, help="output annotation JSON path"),
        _Opt("polygons", bool, False, help="emit polygon segmentations instead of RLE"),
    ],
    "eval": [
        _Opt("pred", str, required=True, help="prediction document (with scores)"),
        _Opt("gt", str, required=True, help="ground-truth document"),
        _Opt("iou", float, 0.5, help="IoU threshold for a match"),
        _Opt("mode", str, "segm", choices=("segm", "bbox"), help="overlap criterion"),
        _Opt("json-out", str, help="also write results as JSON"),
    ],
    "roialign": [
        _Opt("features", str, required=True, help="MFT feature map (f32, H x W x C)"),
        _Opt("rois", str, required=True, help="CSV lines image_id,x1,y1,x2,y2"),
        _Opt("output-size", str, required=True, help="pooled size as HxW, e.g. 7x7"),
        _Opt("pool", str, "max", choices=("max", "avg"), help="reduction mode"),
        _Opt("samples", int, 2, help="sample points per bin side"),
        _Opt("out", str, required=True, help="output directory for roi<k>.mft"),
        _Opt("compare-roipool", bool, False, help="also emit quantized roi<k>_pool.mft"),
    ],
}


def _build_parser() -> _Parser:
    parser = _Parser(prog="maskpipe", description=__doc__.splitlines()[0])
    subs = parser.add_subparsers(dest="command", metavar="command")
    for command, options in _OPTIONS.items():
        sub = subs.add_parser(command, prog=f"maskpipe {command}")
        for opt in options:
            flag = f"--{opt.key}"
            if opt.kind is bool:
                sub.add_argument(flag, dest=opt.key, action="store_const", const=True,
                                 help=opt.help)
            else:
                kwargs = {"dest": opt.key, "type": opt.kind, "help": opt.help}
                if opt.choices:
                    kwargs["choices"] = opt.choices
                sub.add_argument(flag, **kwargs)
        sub.add_argument("--config", dest="config", help="key=value config file")
        sub.add_argument("--dry-run", dest="dry_run", action="store_true",
                         help="echo the merged configuration and exit")
        sub.set_defaults(_usage=sub.format_usage)
    return parser


def _read_config(path: str, options: list[_Opt]) -> dict:
    by_key = {opt.key: opt for opt in options}
    values: dict = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise _UsageError(f"cannot read config file: {exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise _UsageError(f"config line {lineno}: expected key=value, got {line!r}")
        key, _, text = line.partition("=")
        key = key.strip()
        opt = by_key.get(key)
        if opt is None:
            raise _UsageError(f"config line {lineno}: unknown key {key!r}")
        values[key] = opt.convert(text.strip())
    return values


def _merge_config(args: argparse.Namespace, options: list[_Opt]) -> dict:
    merged = {opt.key: opt.default for opt in options}
    if args.config:
        merged.update(_read_config(args.config, options))
    for opt in options:
        value = getattr(args, opt.key)
        if value is not None:
            merged[opt.key] = value
    return merged


def _check_required(cfg: dict, options: list[_Opt], usage) -> None:
    for opt in options:
        if opt.required and cfg[opt.key] is None:
            sys.stderr.write(usage())
            raise _UsageError(f"missing required option --{opt.key}")


def _echo_config(cfg: dict, options: list[_Opt]) -> None:
    for opt in options:
        value = cfg[opt.key]
        if value is None:
            continue
        if opt.kind is bool:
            value = "true" if value else "false"
        print(f"{opt.key}={value}")


# --- subcommands ------------------------------------------------------------


def _score_map_paths(source: str) -> list[Path]:
    path = Path(source)
    if path.is_dir():
        return sorted(path.glob("*.mft"))
    if path.is_file():
        return [path]
    raise _DataError(f"no such file or directory: {source}")


def cmd_postprocess(cfg: dict) -> int:
    policy = post.FilterPolicy(
        min_area=cfg["min-area"],
        keep_largest=cfg["keep-largest"],
        connectivity=cfg["connectivity"],
        fill_holes=cfg["fill-holes"],
    )
    out_dir = Path(cfg["out-masks"])
    out_dir.mkdir(parents=True, exist_ok=True)
    for path in _score_map_paths(cfg["scores"]):
        try:
            tensor = read_tensor(path)
        except (MaskPipeError, OSError, ValueError) as exc:
            raise _DataError(f"{path}: {exc}") from exc
        if not isinstance(tensor, ScoreMap):
            raise _DataError(f"{path}: not a score map")
        try:
            masks = post.score_map_to_masks(tensor, cfg["threshold"], policy)
        except MaskPipeError as exc:
            raise _DataError(f"{path}: {exc}") from exc
        for class_id in sorted(masks):
            write_mask_pgm(masks[class_id], out_dir / f"{path.stem}_c{class_id}.pgm")
    return 0


def _read_image_meta(path: str) -> dict[str, tuple[str, int, int]]:
    meta: dict[str, tuple[str, int, int]] = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise _UsageError(f"cannot read image meta file: {exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise _UsageError(
                f"image meta line {lineno}: expected stem,file_name,height,width"
            )
        stem, file_name, height, width = (p.strip() for p in parts)
        try:
            meta[stem] = (file_name, int(height), int(width))
        except ValueError as exc:
            raise _UsageError(f"image meta line {lineno}: {exc}") from exc
    return meta


def _read_categories(path: str) -> dict[int, str]:
    table: dict[int, str] = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise _UsageError(f"cannot read categories file: {exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        cid_text, sep, name = line.partition(",")
        if not sep or not name.strip():
            raise _UsageError(f"categories line {lineno}: expected id,name")
        try:
            cid = int(cid_text)
        except ValueError as exc:
            raise _UsageError(f"categories line {lineno}: {exc}") from exc
        if cid in table:
            raise _UsageError(f"categories line {lineno}: duplicate id {cid}")
        table[cid] = name.strip()
    return table


def cmd_annotate(cfg: dict) -> int:
    masks_dir = Path(cfg["masks"])
    if not masks_dir.is_dir():
        raise _DataError(f"not a directory: {masks_dir}")
    meta = _read_image_meta(cfg["image-meta"])
    categories = _read_categories(cfg["categories"])
    entries = []
    for path in sorted(masks_dir.glob("*.pgm")):
        match = _MASK_NAME.match(path.name)
        if match is None:
            raise _DataError(f"{path}: mask files must be named <stem>_c<class>.pgm")
        stem, class_id = match.group("stem"), int(match.group("cls"))
        if stem not in meta:
            raise _UsageError(f"{path}: stem {stem!r} missing from the image meta file")
        if class_id not in categories:
            raise _UsageError(f"{path}: class {class_id} missing from the categories file")
        try:
            mask = read_mask_pgm(path)
        except (MaskPipeError, OSError) as exc:
            raise _DataError(f"{path}: {exc}") from exc
        entries.append(((stem, class_id), meta[stem], mask))
    entries.sort(key=lambda e: e[0])
    try:
        doc = anno.build_annotations(
            [(image, key[1], mask) for key, image, mask in entries],
            mode="polygon" if cfg["polygons"] else "rle",
            categories=categories,
        )
    except MaskPipeError as exc:
        raise _DataError(str(exc)) from exc
    anno.write_annotation_doc(doc, cfg["out"])
    return 0


def cmd_eval(cfg: dict) -> int:
    try:
        preds = anno.read_annotation_doc(cfg["pred"], require_scores=True)
        gt = anno.read_annotation_doc(cfg["gt"])
        result = evaluate(preds, gt, iou_thr=cfg["iou"], mode=cfg["mode"])
    except (MaskPipeError, OSError) as exc:
        raise _DataError(str(exc)) from exc
    names = {c.id: c.name for c in gt.categories}
    print(f"{'class':>8}  {'name':<16}  {'AP':>8}")
    for cid in sorted(result.per_class_ap):
        name = names.get(cid, f"class_{cid}")
        print(f"{cid:>8}  {name:<16}  {result.per_class_ap[cid]:>8.4f}")
    print(f"mAP = {result.map_value:.4f}")
    if cfg["json-out"]:
        payload = {
            "per_class_ap": {str(c): ap for c, ap in sorted(result.per_class_ap.items())},
            "mAP": result.map_value,
        }
        Path(cfg["json-out"]).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    return 0


def _parse_output_size(text: str) -> tuple[int, int]:
    match = re.fullmatch(r"(\d+)x(\d+)", text)
    if match is None:
        raise _UsageError(f"output-size must look like 7x7, got {text!r}")
    out_h, out_w = int(match.group(1)), int(match.group(2))
    if out_h < 1 or out_w < 1:
        raise _UsageError(f"output-size must be >= 1x1, got {text!r}")
    return out_h, out_w


def _read_rois(path: str) -> list[tuple[int, Roi]]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise _DataError(f"cannot read ROI file: {exc}") from exc
    rois = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 5:
            raise _DataError(f"{path} line {lineno}: expected image_id,x1,y1,x2,y2")
        try:
            image_id = int(parts[0])
            roi = Roi(*(float(p) for p in parts[1:]))
        except ValueError as exc:
            raise _DataError(f"{path} line {lineno}: {exc}") from exc
        rois.append((image_id, roi))
    return rois


def cmd_roialign(cfg: dict) -> int:
    out_h, out_w = _parse_output_size(cfg["output-size"])
    if cfg["samples"] < 1:
        raise _UsageError(f"samples must be >= 1, got {cfg['samples']}")
    spec = PoolSpec(out_h=out_h, out_w=out_w, samples_per_side=cfg["samples"], mode=cfg["pool"])
    try:
        tensor = read_tensor(cfg["features"])
    except (MaskPipeError, OSError, ValueError) as exc:
        raise _DataError(f"{cfg['features']}: {exc}") from exc
    if not isinstance(tensor, ScoreMap):
        raise _DataError(f"{cfg['features']}: not an f32 H x W x C tensor")
    features = FeatureMap.from_score_map(tensor)
    rois = _read_rois(cfg["rois"])
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    for k, (_image_id, roi) in enumerate(rois):
        write_tensor(roi_align(features, roi, spec).to_score_map(), out_dir / f"roi{k}.mft")
        if cfg["compare-roipool"]:
            write_tensor(roi_pool(features, roi, spec).to_score_map(), out_dir / f"roi{k}_pool.mft")
    return 0


_COMMANDS = {
    "postprocess": cmd_postprocess,
    "annotate": cmd_annotate,
    "eval": cmd_eval,
    "roialign": cmd_roialign,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 3
    options = _OPTIONS[args.command]
    try:
        cfg = _merge_config(args, options)
        if args.dry_run:
            _echo_config(cfg, options)
            return 0
        _check_required(cfg, options, args._usage)
        return _COMMANDS[args.command](cfg)
    except _UsageError as exc:
        sys.stderr.write(f"maskpipe {args.command}: error: {exc}\n")
        return 3
    except (_DataError, MaskPipeError, OSError, ValueError) as exc:
        sys.stderr.write(f"maskpipe {args.command}: error: {exc}\n")
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
