"""Dataset ingestion: manifests, quality checks, splits, frame loading.

A dataset on disk is a UTF-8 CSV manifest with header
``id,frames_dir,label,signer_id,repetition,frame_count,fps`` plus a sibling
``classes.txt`` (one class name per line, order defines class_index). Each
sample's frames live as image files under its ``frames_dir``. Split
assignments are exchanged as ``splits.csv`` with header ``id,split``.
"""

from __future__ import annotations

import csv
import dataclasses
import math
import shlex
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .exceptions import (
    ConfigError,
    DataError,
    DecodeError,
    DuplicateSampleId,
    EmptySplit,
    InconsistentResolution,
    MalformedRow,
    MissingFile,
    TooFewSigners,
    UnknownClassLabel,
)

MANIFEST_FIELDS = ["id", "frames_dir", "label", "signer_id", "repetition", "frame_count", "fps"]
SPLIT_NAMES = ("train", "val", "test")
FRAME_PATTERN = "frame_{:05d}.png"


@dataclass
class SampleRecord:
    id: str
    frames_dir: Path
    label: str
    class_index: int
    signer_id: str
    repetition: int
    frame_count: int
    fps: float | None = None


@dataclass
class DatasetManifest:
    classes: list[str]
    samples: list[SampleRecord]
    split_assignment: dict[str, str] | None = None
    root: Path | None = None

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def by_split(self, split: str) -> list[SampleRecord]:
        if self.split_assignment is None:
            raise DataError("manifest has no split assignment")
        if split not in SPLIT_NAMES:
            raise ConfigError(f"unknown split name: {split!r}")
        return [s for s in self.samples if self.split_assignment[s.id] == split]


def frame_file_name(index: int) -> str:
    return FRAME_PATTERN.format(index)


def list_frame_files(frames_dir) -> list[Path]:
    frames_dir = Path(frames_dir)
    if not frames_dir.is_dir():
        return []
    return sorted(p for p in frames_dir.iterdir() if p.suffix.lower() == ".png")


def load_manifest(path) -> DatasetManifest:
    """Read a manifest CSV and its sibling classes.txt."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"manifest not found: {path}")
    classes_path = path.parent / "classes.txt"
    if not classes_path.is_file():
        raise MissingFile(f"class list not found: {classes_path}")

    classes = [line.strip() for line in classes_path.read_text(encoding="utf-8").splitlines() if line.strip()]
    if not classes:
        raise DataError(f"class list is empty: {classes_path}")
    class_index = {}
    for i, name in enumerate(classes):
        if name in class_index:
            raise DataError(f"duplicate class name {name!r} in {classes_path}")
        class_index[name] = i

    samples = []
    seen_ids = set()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedRow(1, "manifest is empty") from None
        if header != MANIFEST_FIELDS:
            raise MalformedRow(1, f"expected header {','.join(MANIFEST_FIELDS)}, got {','.join(header)}")
        for line_number, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(MANIFEST_FIELDS):
                raise MalformedRow(line_number, f"expected {len(MANIFEST_FIELDS)} fields, got {len(row)}")
            sample_id, frames_dir, label, signer_id, repetition, frame_count, fps = (v.strip() for v in row)
            if not sample_id:
                raise MalformedRow(line_number, "empty sample id")
            if sample_id in seen_ids:
                raise DuplicateSampleId(f"line {line_number}: duplicate sample id {sample_id!r}")
            if not frames_dir:
                raise MalformedRow(line_number, "empty frames_dir")
            if label not in class_index:
                raise UnknownClassLabel(f"line {line_number}: label {label!r} not in classes.txt")
            try:
                repetition_i = int(repetition)
                frame_count_i = int(frame_count)
            except ValueError as exc:
                raise MalformedRow(line_number, str(exc)) from exc
            if repetition_i < 1:
                raise MalformedRow(line_number, f"repetition must be >= 1, got {repetition_i}")
            if frame_count_i < 1:
                raise MalformedRow(line_number, f"frame_count must be >= 1, got {frame_count_i}")
            if fps:
                try:
                    fps_f = float(fps)
                except ValueError as exc:
                    raise MalformedRow(line_number, str(exc)) from exc
                if fps_f <= 0:
                    raise MalformedRow(line_number, f"fps must be positive, got {fps_f}")
            else:
                fps_f = None
            frames_path = Path(frames_dir)
            if not frames_path.is_absolute():
                frames_path = path.parent / frames_path
            seen_ids.add(sample_id)
            samples.append(
                SampleRecord(
                    id=sample_id,
                    frames_dir=frames_path,
                    label=label,
                    class_index=class_index[label],
                    signer_id=signer_id,
                    repetition=repetition_i,
                    frame_count=frame_count_i,
                    fps=fps_f,
                )
            )
    return DatasetManifest(classes=classes, samples=samples, root=path.parent)


def write_manifest(manifest: DatasetManifest, path) -> None:
    """Write manifest CSV plus sibling classes.txt. frames_dir is written
    relative to the manifest directory when possible."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    (path.parent / "classes.txt").write_text("\n".join(manifest.classes) + "\n", encoding="utf-8")
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_FIELDS)
        for rec in manifest.samples:
            frames_dir = Path(rec.frames_dir)
            try:
                frames_dir = frames_dir.relative_to(path.parent)
            except ValueError:
                pass
            writer.writerow(
                [
                    rec.id,
                    frames_dir.as_posix(),
                    rec.label,
                    rec.signer_id,
                    rec.repetition,
                    rec.frame_count,
                    "" if rec.fps is None else format(rec.fps, "g"),
                ]
            )


def write_splits(assignment: dict[str, str], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "split"])
        for sample_id, split in assignment.items():
            writer.writerow([sample_id, split])


def read_splits(path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"splits file not found: {path}")
    assignment = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["id", "split"]:
            raise MalformedRow(1, "expected header id,split")
        for line_number, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise MalformedRow(line_number, f"expected 2 fields, got {len(row)}")
            sample_id, split = row[0].strip(), row[1].strip()
            if split not in SPLIT_NAMES:
                raise MalformedRow(line_number, f"unknown split {split!r}")
            if sample_id in assignment:
                raise DuplicateSampleId(f"line {line_number}: duplicate sample id {sample_id!r}")
            assignment[sample_id] = split
    return assignment


def _apportion(total: int, fractions) -> list[int]:
    """Largest-remainder apportionment of `total` items over `fractions`."""
    quotas = [total * f for f in fractions]
    base = [math.floor(q) for q in quotas]
    order = sorted(range(len(fractions)), key=lambda j: (-(quotas[j] - base[j]), j))
    for j in order[: total - sum(base)]:
        base[j] += 1
    return base


def _check_fractions(fractions) -> tuple[float, float, float]:
    if len(fractions) != 3:
        raise ConfigError(f"expected 3 split fractions, got {len(fractions)}")
    fracs = tuple(float(f) for f in fractions)
    if any(f <= 0 for f in fracs):
        raise ConfigError(f"split fractions must be positive, got {fracs}")
    if abs(sum(fracs) - 1.0) > 1e-6:
        raise ConfigError(f"split fractions must sum to 1, got sum {sum(fracs)!r}")
    return fracs


def split_dataset(manifest: DatasetManifest, mode: str, fractions, seed: int) -> DatasetManifest:
    """Assign every sample to train/val/test.

    signer_dependent: seeded stratified shuffle; each class is spread over
    all three splits whenever it has at least 3 samples, and overall split
    sizes match largest-remainder rounding of the fractions exactly.

    signer_independent: whole signers are assigned to a single split,
    greedily packing the split whose sample-count deficit is largest.
    """
    fracs = _check_fractions(fractions)
    if mode == "signer_dependent":
        assignment = _split_stratified(manifest, fracs, seed)
    elif mode == "signer_independent":
        assignment = _split_by_signer(manifest, fracs, seed)
    else:
        raise ConfigError(f"unknown split mode: {mode!r}")
    ordered = {rec.id: assignment[rec.id] for rec in manifest.samples}
    return dataclasses.replace(manifest, split_assignment=ordered)


def _split_stratified(manifest: DatasetManifest, fracs, seed: int) -> dict[str, str]:
    n_total = len(manifest.samples)
    if n_total == 0:
        raise DataError("cannot split an empty manifest")
    targets = _apportion(n_total, fracs)
    if min(targets) == 0:
        raise EmptySplit(f"fractions {fracs} give an empty split for {n_total} samples")

    rng = np.random.default_rng(seed)
    by_class: dict[int, list[str]] = {}
    for rec in manifest.samples:
        by_class.setdefault(rec.class_index, []).append(rec.id)

    # buckets[j] maps class_index -> ids assigned to split j, in assignment order
    buckets: list[dict[int, list[str]]] = [{}, {}, {}]
    sizes = [0, 0, 0]
    for ci in sorted(by_class):
        ids = list(by_class[ci])
        rng.shuffle(ids)
        alloc = _apportion(len(ids), fracs)
        if len(ids) >= 3:
            while min(alloc) == 0:
                j_zero = alloc.index(0)
                j_from = max(range(3), key=lambda j: (alloc[j], -j))
                alloc[j_from] -= 1
                alloc[j_zero] += 1
        start = 0
        for j in range(3):
            chunk = ids[start : start + alloc[j]]
            start += alloc[j]
            if chunk:
                buckets[j][ci] = chunk
            sizes[j] += alloc[j]

    # Per-class rounding can drift the split sizes off the global targets;
    # move single samples from surplus splits to deficit splits, preferring
    # classes that keep at least one sample behind.
    while sizes != targets:
        j_from = max(range(3), key=lambda j: (sizes[j] - targets[j], -j))
        j_to = max(range(3), key=lambda j: (targets[j] - sizes[j], -j))
        movable = [ci for ci, ids in buckets[j_from].items() if len(ids) >= 2]
        if not movable:
            movable = list(buckets[j_from])
        ci = max(movable, key=lambda c: (len(buckets[j_from][c]), -c))
        sample_id = buckets[j_from][ci].pop()
        if not buckets[j_from][ci]:
            del buckets[j_from][ci]
        buckets[j_to].setdefault(ci, []).append(sample_id)
        sizes[j_from] -= 1
        sizes[j_to] += 1

    assignment = {}
    for j, split in enumerate(SPLIT_NAMES):
        for ids in buckets[j].values():
            for sample_id in ids:
                assignment[sample_id] = split
    return assignment


def _split_by_signer(manifest: DatasetManifest, fracs, seed: int) -> dict[str, str]:
    n_total = len(manifest.samples)
    counts: dict[str, int] = {}
    for rec in manifest.samples:
        counts[rec.signer_id] = counts.get(rec.signer_id, 0) + 1
    signers = sorted(counts)
    if len(signers) < 3:
        raise TooFewSigners(f"signer_independent split needs >= 3 signers, got {len(signers)}")
    rng = np.random.default_rng(seed)
    rng.shuffle(signers)

    assigned = [0.0, 0.0, 0.0]
    signer_split: dict[str, int] = {}
    for signer in signers:
        deficits = [fracs[j] * n_total - assigned[j] for j in range(3)]
        j = max(range(3), key=lambda k: (deficits[k], -k))
        signer_split[signer] = j
        assigned[j] += counts[signer]

    split_sizes = [0, 0, 0]
    for signer, j in signer_split.items():
        split_sizes[j] += counts[signer]
    if min(split_sizes) == 0:
        j_empty = split_sizes.index(0)
        raise EmptySplit(f"no signers assigned to split {SPLIT_NAMES[j_empty]!r}")
    return {rec.id: SPLIT_NAMES[signer_split[rec.signer_id]] for rec in manifest.samples}


# --- quality checks ---


@dataclass
class QCRules:
    """Machine-checkable subset of the corpus quality criteria."""

    check_decodable: bool = True
    check_frame_count: bool = True
    check_extreme_frames: bool = True
    extreme_threshold: float = 0.02
    min_resolution: int | None = None
    duration_bounds: tuple[float, float] | None = None
    require_fps: bool = False


@dataclass
class QCReport:
    sample_id: str
    passed: bool
    violations: list[dict] = field(default_factory=list)
    # Criteria needing human judgment (sign order, signer conduct) are never
    # auto-passed; every sample carries this flag until someone reviews it.
    manual_review_required: bool = True


def validate_sample(record: SampleRecord, rules: QCRules | None = None) -> QCReport:
    rules = rules or QCRules()
    violations = []

    def add(rule_id, message):
        violations.append({"rule_id": rule_id, "message": message})

    files = list_frame_files(record.frames_dir)
    if not files:
        add("EMPTY_CLIP", f"no frame files in {record.frames_dir}")
    else:
        if rules.check_frame_count and len(files) != record.frame_count:
            add(
                "FRAME_COUNT_MISMATCH",
                f"manifest says {record.frame_count} frames, found {len(files)}",
            )
        if rules.check_decodable or rules.check_extreme_frames or rules.min_resolution:
            for i, f in enumerate(files):
                try:
                    with Image.open(f) as img:
                        img = img.convert("RGB")
                        width, height = img.size
                        arr = np.asarray(img, dtype=np.float32) / 255.0
                except (OSError, UnidentifiedImageError, ValueError) as exc:
                    add("UNDECODABLE_FRAME", f"{f.name}: {exc}")
                    continue
                if rules.min_resolution and min(width, height) < rules.min_resolution:
                    add(
                        "LOW_RESOLUTION",
                        f"{f.name}: {width}x{height} below minimum {rules.min_resolution}",
                    )
                if rules.check_extreme_frames:
                    m = float(arr.mean())
                    if m <= rules.extreme_threshold or m >= 1.0 - rules.extreme_threshold:
                        add("EXTREME_FRAME", f"{f.name}: mean intensity {m:.4f}")

    if record.fps is None:
        if rules.require_fps or rules.duration_bounds is not None:
            add("MISSING_FPS", "fps needed for duration check but not recorded")
    elif rules.duration_bounds is not None:
        lo, hi = rules.duration_bounds
        duration = record.frame_count / record.fps
        if not lo <= duration <= hi:
            add(
                "DURATION_OUT_OF_RANGE",
                f"duration {duration:.2f}s outside [{lo:.2f}, {hi:.2f}]s",
            )

    return QCReport(sample_id=record.id, passed=not violations, violations=violations)


def duration_bounds_from_corpus(manifest: DatasetManifest, lo_pct: float = 5.0, hi_pct: float = 95.0):
    """Duration bounds (seconds) from corpus percentiles, for QCRules."""
    durations = [rec.frame_count / rec.fps for rec in manifest.samples if rec.fps]
    if not durations:
        raise DataError("no samples with fps recorded; cannot derive duration bounds")
    lo, hi = np.percentile(np.asarray(durations, dtype=np.float64), [lo_pct, hi_pct])
    return float(lo), float(hi)


# --- frame loading ---


def load_frames(record: SampleRecord) -> np.ndarray:
    """Decode a sample's frames to a float32 array N x 3 x H x W in [0, 1]."""
    files = list_frame_files(record.frames_dir)
    if not files:
        raise MissingFile(f"no frame files in {record.frames_dir}")
    frames = []
    shape = None
    for f in files:
        try:
            with Image.open(f) as img:
                arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
        except (OSError, UnidentifiedImageError, ValueError) as exc:
            raise DecodeError(f"{f}: {exc}") from exc
        if shape is None:
            shape = arr.shape
        elif arr.shape != shape:
            raise InconsistentResolution(
                f"{f.name} has shape {arr.shape[1]}x{arr.shape[0]}, expected {shape[1]}x{shape[0]}"
            )
        frames.append(arr.transpose(2, 0, 1))
    return np.stack(frames, axis=0)


def decode_video(video_path, frames_dir, command_template: str) -> int:
    """Invoke an external decoder to materialize frames for one video.

    The template is formatted with {video} and {frames_dir} and must make the
    decoder emit files named frame_%05d.png into frames_dir. Returns the
    number of frames produced.
    """
    video_path = Path(video_path)
    if not video_path.exists():
        raise MissingFile(f"video not found: {video_path}")
    frames_dir = Path(frames_dir)
    frames_dir.mkdir(parents=True, exist_ok=True)
    cmd = command_template.format(video=shlex.quote(str(video_path)), frames_dir=shlex.quote(str(frames_dir)))
    proc = subprocess.run(cmd, shell=True, capture_output=True, text=True)
    if proc.returncode != 0:
        raise DecodeError(f"decoder failed ({proc.returncode}) for {video_path}: {proc.stderr.strip()}")
    count = len(list_frame_files(frames_dir))
    if count == 0:
        raise DecodeError(f"decoder produced no frames for {video_path}")
    return count
