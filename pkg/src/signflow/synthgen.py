"""Synthetic gesture corpus generator.

Each class is a motion signature: a waypoint trajectory traversed by a
colored geometric shape. Each signer is a style: background color, overall
brightness, shape size, speed, a positional offset, and a static distractor
blob, so that cross-signer generalization is measurably harder than
within-signer generalization. Videos start and end with transition segments
(the shape drifting between a rest position and the trajectory) emulating
movement epenthesis. Generation is byte-deterministic under the spec seed.
"""

from __future__ import annotations

import colorsys
import dataclasses
import hashlib
import json
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .exceptions import ConfigError, DataError, OutputExists
from .ingest import (
    DatasetManifest,
    SampleRecord,
    frame_file_name,
    load_frames,
    write_manifest,
)
from .preprocess import sample_indices

NUM_SHAPES = 8
MANIFEST_NAME = "manifest.csv"


@dataclass
class SynthSpec:
    num_classes: int = 5
    num_signers: int = 6
    repetitions: int = 3
    frames_range: tuple[int, int] = (60, 180)
    resolution: int = 64
    signer_style_jitter: float = 0.30
    transition_range: tuple[int, int] = (6, 18)
    fps: float = 25.0
    imbalance: bool = False
    separability_floor: float = 0.18
    seed: int = 0

    def validate(self):
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.num_signers < 1 or self.repetitions < 1:
            raise ConfigError("num_signers and repetitions must be >= 1")
        lo, hi = self.frames_range
        if lo < 8 or hi <= lo:
            raise ConfigError(f"frames_range must satisfy 8 <= lo < hi, got {self.frames_range}")
        tlo, thi = self.transition_range
        if tlo < 1 or thi <= tlo or 2 * thi >= lo:
            raise ConfigError("transition_range must fit twice inside the shortest video")
        if self.resolution < 16:
            raise ConfigError(f"resolution must be >= 16, got {self.resolution}")
        if not 0.0 <= self.signer_style_jitter <= 1.0:
            raise ConfigError("signer_style_jitter must be in [0, 1]")
        if self.fps <= 0:
            raise ConfigError("fps must be positive")
        return self


@dataclass
class MotionSignature:
    class_index: int
    waypoints: list[tuple[float, float]]
    shape_id: int
    base_speed: float


@dataclass
class SignerStyle:
    signer_index: int
    brightness: float
    size: float
    speed: float
    offset: tuple[float, float]
    bg_color: tuple[float, float, float]
    hue_shift: float
    distractor_pos: tuple[float, float]
    distractor_color: tuple[float, float, float]


def _path_points(waypoints, k: int = 64) -> np.ndarray:
    """Sample k points along the piecewise-linear waypoint path."""
    pts = np.asarray(waypoints, dtype=np.float64)
    u = np.linspace(0.0, 1.0, k)
    return _positions_at(pts, u)


def _positions_at(pts: np.ndarray, u) -> np.ndarray:
    """Positions along the path at phases u in [0, 1]."""
    u = np.clip(np.asarray(u, dtype=np.float64), 0.0, 1.0)
    segs = len(pts) - 1
    x = u * segs
    i = np.minimum(x.astype(np.int64), segs - 1)
    frac = (x - i)[..., None]
    return pts[i] * (1.0 - frac) + pts[i + 1] * frac


def trajectory_distance(a: MotionSignature, b: MotionSignature, k: int = 64) -> float:
    pa, pb = _path_points(a.waypoints, k), _path_points(b.waypoints, k)
    return float(np.linalg.norm(pa - pb, axis=1).mean())


def separability_oracle(signatures: list[MotionSignature]) -> tuple[np.ndarray, float]:
    """Pairwise trajectory distance table and the minimum off-diagonal margin."""
    c = len(signatures)
    table = np.zeros((c, c), dtype=np.float64)
    for i in range(c):
        for j in range(c):
            if i != j:
                table[i, j] = trajectory_distance(signatures[i], signatures[j])
    off_diag = table[~np.eye(c, dtype=bool)]
    margin = float(off_diag.min()) if off_diag.size else 0.0
    return table, margin


def make_signatures(spec: SynthSpec, max_attempts: int = 200):
    """Draw per-class trajectories until the separability floor holds.

    The retry loop is deterministic: attempt k uses the (seed, k) stream.
    """
    for attempt in range(max_attempts):
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 1, attempt]))
        signatures = []
        for c in range(spec.num_classes):
            n_way = 4
            waypoints = [tuple(rng.uniform(0.18, 0.82, size=2)) for _ in range(n_way)]
            signatures.append(
                MotionSignature(
                    class_index=c,
                    waypoints=waypoints,
                    shape_id=c % NUM_SHAPES,
                    base_speed=float(rng.uniform(0.85, 1.15)),
                )
            )
        _, margin = separability_oracle(signatures)
        if margin >= spec.separability_floor:
            return signatures, margin, attempt
    raise DataError(
        f"no trajectory set met separability floor {spec.separability_floor} "
        f"in {max_attempts} attempts"
    )


def make_styles(spec: SynthSpec) -> list[SignerStyle]:
    j = spec.signer_style_jitter
    styles = []
    for s in range(spec.num_signers):
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 2, s]))
        styles.append(
            SignerStyle(
                signer_index=s,
                brightness=float(rng.uniform(1.0 - 0.6 * j, 1.0 + 0.6 * j)),
                size=float(rng.uniform(1.0 - 0.8 * j, 1.0 + 0.8 * j)),
                speed=float(rng.uniform(1.0 - 0.5 * j, 1.0 + 0.5 * j)),
                offset=tuple(rng.uniform(-0.35 * j, 0.35 * j, size=2)),
                bg_color=tuple(rng.uniform(0.10, 0.45, size=3)),
                hue_shift=float(rng.uniform(-0.3 * j, 0.3 * j)),
                distractor_pos=tuple(rng.uniform(0.12, 0.88, size=2)),
                distractor_color=tuple(rng.uniform(0.3, 1.0, size=3)),
            )
        )
    return styles


def class_color(class_index: int, num_classes: int, hue_shift: float = 0.0):
    hue = (class_index / num_classes + hue_shift) % 1.0
    return colorsys.hsv_to_rgb(hue, 0.85, 1.0)


def _shape_mask(shape_id: int, res: int, cx: float, cy: float, r: float) -> np.ndarray:
    yy, xx = np.mgrid[0:res, 0:res].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    if shape_id == 0:  # circle
        return dx * dx + dy * dy < r * r
    if shape_id == 1:  # square
        return np.maximum(np.abs(dx), np.abs(dy)) < 0.9 * r
    if shape_id == 2:  # diamond
        return np.abs(dx) + np.abs(dy) < 1.2 * r
    if shape_id == 3:  # ring
        d2 = dx * dx + dy * dy
        return (d2 < r * r) & (d2 > (0.55 * r) ** 2)
    if shape_id == 4:  # plus
        return ((np.abs(dx) < 0.35 * r) & (np.abs(dy) < r)) | (
            (np.abs(dy) < 0.35 * r) & (np.abs(dx) < r)
        )
    if shape_id == 5:  # triangle
        return (dy > -r) & (dy < 0.6 * r) & (np.abs(dx) < 0.55 * (dy + r))
    if shape_id == 6:  # horizontal bar
        return (np.abs(dy) < 0.4 * r) & (np.abs(dx) < r)
    if shape_id == 7:  # vertical bar
        return (np.abs(dx) < 0.4 * r) & (np.abs(dy) < r)
    raise ConfigError(f"unknown shape id {shape_id}")


def render_frame(pos, signature: MotionSignature, style: SignerStyle, spec: SynthSpec) -> np.ndarray:
    """One uint8 H x W x 3 frame: background, static distractor, moving shape."""
    res = spec.resolution
    canvas = np.empty((res, res, 3), dtype=np.float64)
    canvas[:] = style.bg_color

    dx_px = style.distractor_pos[0] * (res - 1)
    dy_px = style.distractor_pos[1] * (res - 1)
    dmask = _shape_mask(0, res, dx_px, dy_px, 0.10 * res)
    canvas[dmask] = style.distractor_color

    x = np.clip(pos[0] + style.offset[0], 0.02, 0.98) * (res - 1)
    y = np.clip(pos[1] + style.offset[1], 0.02, 0.98) * (res - 1)
    r = 0.14 * res * style.size
    mask = _shape_mask(signature.shape_id, res, x, y, r)
    canvas[mask] = class_color(signature.class_index, spec.num_classes, style.hue_shift)

    canvas = np.clip(canvas * style.brightness, 0.0, 1.0)
    return np.round(canvas * 255.0).astype(np.uint8)


def _render_video(signature, style, spec, rng) -> list[np.ndarray]:
    n_frames = int(rng.integers(spec.frames_range[0], spec.frames_range[1]))
    t_in = int(rng.integers(spec.transition_range[0], spec.transition_range[1]))
    t_out = int(rng.integers(spec.transition_range[0], spec.transition_range[1]))
    n_sign = n_frames - t_in - t_out

    pts = np.asarray(signature.waypoints, dtype=np.float64)
    rest_in = rng.uniform(0.10, 0.90, size=2)
    rest_out = rng.uniform(0.10, 0.90, size=2)

    positions = []
    for t in range(t_in):
        u = t / max(t_in - 1, 1)
        positions.append(rest_in * (1.0 - u) + pts[0] * u)
    speed = signature.base_speed * style.speed
    for t in range(n_sign):
        u = min(1.0, speed * t / max(n_sign - 1, 1))
        positions.append(_positions_at(pts, u))
    for t in range(t_out):
        u = (t + 1) / max(t_out, 1)
        positions.append(pts[-1] * (1.0 - u) + rest_out * u)

    return [render_frame(p, signature, style, spec) for p in positions]


def _video_plan(spec: SynthSpec):
    """All (class, signer, repetition) combos, minus imbalance drops."""
    plan = []
    for c in range(spec.num_classes):
        combos = [(s, r) for s in range(spec.num_signers) for r in range(1, spec.repetitions + 1)]
        if spec.imbalance:
            rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 3, c]))
            n_drop = int(rng.integers(0, spec.repetitions + 1))
            if n_drop:
                drop = set(rng.choice(len(combos), size=n_drop, replace=False).tolist())
                combos = [combo for k, combo in enumerate(combos) if k not in drop]
        plan.extend((c, s, r) for s, r in combos)
    return plan


def generate_dataset(spec: SynthSpec, out_dir, force: bool = False) -> DatasetManifest:
    """Render the corpus and write manifest, classes, spec, signature and
    checksum files under out_dir. Refuses to touch an existing dataset
    unless force is set."""
    spec.validate()
    out_dir = Path(out_dir)
    manifest_path = out_dir / MANIFEST_NAME
    if manifest_path.exists() or (out_dir / "frames").exists():
        if not force:
            raise OutputExists(f"dataset already present under {out_dir}; pass force to regenerate")
        shutil.rmtree(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    signatures, margin, attempt = make_signatures(spec)
    styles = make_styles(spec)
    table, _ = separability_oracle(signatures)

    classes = [f"sign_{c:02d}" for c in range(spec.num_classes)]
    records = []
    checksums = {}
    for c, s, rep in _video_plan(spec):
        video_id = f"c{c:02d}_s{s:02d}_r{rep:02d}"
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 4, c, s, rep]))
        frames = _render_video(signatures[c], styles[s], spec, rng)
        frames_dir = out_dir / "frames" / video_id
        frames_dir.mkdir(parents=True)
        file_hashes = {}
        for i, frame in enumerate(frames):
            fname = frame_file_name(i)
            fpath = frames_dir / fname
            Image.fromarray(frame).save(fpath, format="PNG")
            file_hashes[fname] = hashlib.sha256(fpath.read_bytes()).hexdigest()
        checksums[video_id] = file_hashes
        records.append(
            SampleRecord(
                id=video_id,
                frames_dir=frames_dir,
                label=classes[c],
                class_index=c,
                signer_id=f"signer_{s:02d}",
                repetition=rep,
                frame_count=len(frames),
                fps=spec.fps,
            )
        )

    manifest = DatasetManifest(classes=classes, samples=records, root=out_dir)
    write_manifest(manifest, manifest_path)
    (out_dir / "spec.json").write_text(json.dumps(dataclasses.asdict(spec), indent=2, sort_keys=True) + "\n")
    (out_dir / "signatures.json").write_text(
        json.dumps(
            {
                "margin": margin,
                "attempt": attempt,
                "floor": spec.separability_floor,
                "distance_table": table.tolist(),
                "classes": [dataclasses.asdict(sig) for sig in signatures],
                "signers": [dataclasses.asdict(st) for st in styles],
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    (out_dir / "checksums.json").write_text(json.dumps(checksums, indent=2, sort_keys=True) + "\n")
    return manifest


def motion_features(frames: np.ndarray, t: int = 16) -> np.ndarray:
    """Feature vector from frame-difference motion centroids.

    Frame differencing isolates the moving shape from the static background
    and distractor; features summarize where the motion lives and how it
    moves.
    """
    idx = sample_indices(frames.shape[0], t)
    gray = frames[idx].mean(axis=1)  # t x H x W
    h, w = gray.shape[1:]
    diffs = np.abs(np.diff(gray, axis=0))
    centroids = []
    for d in diffs:
        total = d.sum()
        if total < 1e-6:
            continue
        ys, xs = np.mgrid[0:h, 0:w]
        centroids.append(((d * xs).sum() / total / (w - 1), (d * ys).sum() / total / (h - 1)))
    if len(centroids) < 2:
        return np.zeros(8, dtype=np.float64)
    cents = np.asarray(centroids)
    disp = np.diff(cents, axis=0)
    speed = np.linalg.norm(disp, axis=1)
    return np.array(
        [
            cents[:, 0].mean(),
            cents[:, 1].mean(),
            cents[:, 0].std(),
            cents[:, 1].std(),
            disp[:, 0].mean(),
            disp[:, 1].mean(),
            speed.mean(),
            speed.max(),
        ]
    )


def learnability_oracle(manifest: DatasetManifest, t: int = 16) -> float:
    """Nearest-centroid accuracy on motion features, over the whole corpus.

    A cheap, training-free check that the generated classes are actually
    distinguishable from pixels before any acceptance threshold relies on it.
    """
    feats = []
    labels = []
    for rec in manifest.samples:
        feats.append(motion_features(load_frames(rec), t=t))
        labels.append(rec.class_index)
    x = np.asarray(feats)
    y = np.asarray(labels)
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd[sd == 0] = 1.0
    x = (x - mu) / sd
    centroids = np.stack([x[y == c].mean(axis=0) for c in range(manifest.num_classes)])
    d = np.linalg.norm(x[:, None, :] - centroids[None, :, :], axis=2)
    return float((d.argmin(axis=1) == y).mean())
