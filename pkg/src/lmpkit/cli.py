"""Command-line front end.

Exit codes: 0 success, 1 validation error, 2 I/O error, 3 internal error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path


from . import classify
from .config import PRESETS, LmpConfig, load_config, preset
from .errors import LmpError
from .face import build_heat_maps, load_landmarks
from .features import FeatureRow, extract_sequence, read_features_csv, write_features_csv
from .flowfield import compute_flow, load_frame, write_flo

log = logging.getLogger("lmpkit")

FRAME_SUFFIXES = (".png", ".pgm")
EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_INTERNAL = 0, 1, 2, 3
MANIFEST_FIELDS = ("id", "frames", "landmarks", "label", "subject", "onset", "apex")


@dataclass(frozen=True)
class ManifestEntry:
    sequence: str
    frames: Path
    landmarks: Path
    label: str
    subject: str
    onset: int | None = None
    apex: int | None = None


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    path = Path(path)
    base = path.parent
    entries = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(MANIFEST_FIELDS[:5]) - set(reader.fieldnames or [])
        if missing:
            raise LmpError(f"{path}: manifest lacks columns {sorted(missing)}")
        for row in reader:
            onset = int(row["onset"]) if row.get("onset") else None
            apex = int(row["apex"]) if row.get("apex") else None
            if onset is not None and apex is not None and onset > apex:
                raise LmpError(f"{path}: sequence {row['id']} has onset > apex")
            entries.append(ManifestEntry(
                row["id"], base / row["frames"], base / row["landmarks"],
                row["label"], row["subject"], onset, apex,
            ))
    if not entries:
        raise LmpError(f"{path}: empty manifest")
    return entries


def write_manifest(entries, path: str | Path) -> None:
    base = Path(path).parent
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_FIELDS)
        for e in entries:
            w.writerow([
                e.sequence, os.path.relpath(e.frames, base), os.path.relpath(e.landmarks, base),
                e.label, e.subject, "" if e.onset is None else e.onset, "" if e.apex is None else e.apex,
            ])


def list_frames(directory: Path) -> list[Path]:
    if not directory.is_dir():
        raise FileNotFoundError(f"frame directory {directory} not found")
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in FRAME_SUFFIXES)
    if len(files) < 2:
        raise LmpError(f"{directory}: need at least two frames")
    return files


def load_entry(entry: ManifestEntry):
    """Frames (trimmed to onset..apex) and their landmarks."""
    files = list_frames(entry.frames)
    lo = entry.onset if entry.onset is not None else 0
    hi = entry.apex + 1 if entry.apex is not None else len(files)
    files = files[lo:hi]
    if len(files) < 2:
        raise LmpError(f"sequence {entry.sequence}: activation range holds fewer than two frames")
    frames = [load_frame(p) for p in files]
    size = (frames[0].width, frames[0].height)
    if entry.landmarks.is_dir():
        lm_files = sorted(p for p in entry.landmarks.iterdir() if p.is_file())[lo:hi]
        if len(lm_files) != len(frames):
            raise LmpError(f"sequence {entry.sequence}: {len(lm_files)} landmark files for {len(frames)} frames")
        landmarks = [load_landmarks(p, size) for p in lm_files]
    else:
        if not entry.landmarks.is_file():
            raise FileNotFoundError(f"landmark file {entry.landmarks} not found")
        landmarks = load_landmarks(entry.landmarks, size)
    return frames, landmarks


def _extract_one(args) -> FeatureRow:
    entry, cfg, with_geo = args
    frames, landmarks = load_entry(entry)
    values = extract_sequence(frames, landmarks, cfg, entry.sequence, with_geo=with_geo)
    log.info("extracted %s (%d frames)", entry.sequence, len(frames))
    return FeatureRow(entry.sequence, entry.label, entry.subject, values)


def _resolve_config(args) -> LmpConfig:
    if getattr(args, "config", None):
        return load_config(args.config)
    return preset(getattr(args, "preset", None) or "casme2")


def _map(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def cmd_flow(args) -> int:
    files = list_frames(Path(args.input))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    prev = load_frame(files[0])
    for i, path in enumerate(files[1:]):
        nxt = load_frame(path)
        (out / f"flow_{i:05d}.flo").write_bytes(write_flo(compute_flow(prev, nxt)))
        prev = nxt
    return EXIT_OK


def cmd_extract(args) -> int:
    cfg = _resolve_config(args)
    entries = read_manifest(args.manifest)
    rows = _map(_extract_one, [(e, cfg, args.geo) for e in entries], args.jobs)
    write_features_csv(rows, args.out)
    return EXIT_OK


def _heat_input(entry: ManifestEntry):
    frames, landmarks = load_entry(entry)
    return frames, landmarks, entry.label


def cmd_heatmap(args) -> int:
    cfg = _resolve_config(args)
    entries = read_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    maps = build_heat_maps([_heat_input(e) for e in entries], cfg)
    for label, hm in maps.items():
        safe = "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in label)
        hm.to_png(out / f"heatmap_{safe}.png")
        hm.to_csv(out / f"heatmap_{safe}.csv")
    return EXIT_OK


def _samples(path) -> list[classify.LabeledSample]:
    return [classify.LabeledSample(r.values, r.label, r.subject, r.sequence) for r in read_features_csv(path)]


def cmd_train(args) -> int:
    samples = _samples(args.features)
    C, gamma = classify.grid_search(samples, args.seed) if args.tune else (args.C, args.gamma)
    classify.train(samples, C, gamma).save(args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    samples = _samples(args.features)
    report = classify.evaluate(samples, args.protocol, args.C, args.gamma, args.seed, args.tune)
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    if args.out:
        out = Path(args.out)
        out.write_text(text)
        confusion = Path(args.confusion) if args.confusion else out.with_name(out.stem + "_confusion.csv")
        with open(confusion, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["true\\pred"] + [str(v) for v in report.labels])
            for lab, row in zip(report.labels, report.confusion):
                w.writerow([str(lab)] + [int(v) for v in row])
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_config(args) -> int:
    text = _resolve_config(args).to_json() + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lmpkit", description="Local motion pattern facial expression toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    def lmp_opts(sp):
        g = sp.add_mutually_exclusive_group()
        g.add_argument("--config", help="LMP config JSON file")
        g.add_argument("--preset", choices=sorted(PRESETS), help="named dataset preset (default casme2)")

    def svm_opts(sp):
        sp.add_argument("--C", type=float, default=classify.DEFAULT_C)
        sp.add_argument("--gamma", type=float, default=None, help="RBF gamma (default 1/dim)")
        sp.add_argument("--tune", action="store_true", help="grid-search C and gamma on inner folds")
        sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("flow", help="frames -> .flo files")
    sp.add_argument("input")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_flow)

    sp = sub.add_parser("extract", help="manifest -> feature CSV")
    sp.add_argument("manifest")
    lmp_opts(sp)
    sp.add_argument("--geo", action="store_true", help="append geometric ROI features")
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_extract)

    sp = sub.add_parser("heatmap", help="manifest -> per-class heat maps")
    sp.add_argument("manifest")
    lmp_opts(sp)
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_heatmap)

    sp = sub.add_parser("train", help="feature CSV -> model JSON")
    sp.add_argument("features")
    svm_opts(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="feature CSV -> accuracy report")
    sp.add_argument("features")
    sp.add_argument("--protocol", choices=("kfold10", "loso"), default="kfold10")
    svm_opts(sp)
    sp.add_argument("--out", help="report JSON path (stdout if omitted)")
    sp.add_argument("--confusion", help="confusion CSV path (default next to --out)")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("config", help="print or save an LMP config")
    lmp_opts(sp)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_config)
    return p


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("LMPKIT_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, FileNotFoundError) as exc:
        print(f"lmpkit: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (LmpError, ValueError, KeyError) as exc:
        print(f"lmpkit: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001
        print(f"lmpkit: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
