"""Pen trajectory ingestion: normalization, resampling, synthesis, JSONL IO.

A trajectory is an ordered list of strokes; a stroke is an ordered array of
(x, y) points. All operations are pure and safe to call from parallel
data-loading workers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

#: Arc spacing on the unit square; tuned so a typical character graph has
#: about a hundred nodes.
DEFAULT_INTERVAL = 0.02


@dataclass
class Trajectory:
    """Ordered pen strokes; each stroke is a float array of shape [P, 2]."""

    strokes: list[np.ndarray]

    def num_points(self) -> int:
        return sum(len(s) for s in self.strokes)

    def all_points(self) -> np.ndarray:
        return np.concatenate(self.strokes, axis=0)


@dataclass
class Sample:
    label: int
    trajectory: Trajectory
    id: str = ""


@dataclass
class Dataset:
    samples: list[Sample]
    num_classes: int
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.class_names) != self.num_classes:
            raise DataError(
                f"class_names has {len(self.class_names)} entries, expected {self.num_classes}"
            )
        for s in self.samples:
            if not 0 <= s.label < self.num_classes:
                raise DataError(f"sample {s.id!r} has label {s.label} outside [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.samples)


def as_trajectory(strokes) -> Trajectory:
    """Validate raw nested lists/arrays into a Trajectory."""
    if not strokes:
        raise DataError("empty trajectory: no strokes")
    out = []
    for i, stroke in enumerate(strokes):
        arr = np.asarray(stroke, dtype=np.float64)
        if arr.size == 0:
            raise DataError(f"empty trajectory: stroke {i} has no points")
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise DataError(f"stroke {i} must be a list of [x, y] points, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DataError(f"stroke {i} contains non-finite coordinates")
        out.append(arr)
    return Trajectory(out)


def normalize(traj: Trajectory) -> Trajectory:
    """Uniformly scale and translate into the unit square, centered.

    The longest bounding-box side maps to length 1 with aspect ratio
    preserved; a single repeated point collapses to (0.5, 0.5).
    """
    pts = traj.all_points()
    if not np.all(np.isfinite(pts)):
        raise DataError("trajectory contains non-finite coordinates")
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    side = float((hi - lo).max())
    center = (lo + hi) / 2.0
    if side <= 0.0:
        return Trajectory([np.full_like(s, 0.5) for s in traj.strokes])
    s = 1.0 / side
    return Trajectory([(stroke - center) * s + 0.5 for stroke in traj.strokes])


def _resample_stroke(stroke: np.ndarray, interval: float) -> np.ndarray:
    """Walk the polyline emitting points exactly ``interval`` apart.

    Spacing is Euclidean between consecutive output points (the next point is
    where the path first exits a circle of radius ``interval`` around the
    previous one), so consecutive gaps equal ``interval`` and the final gap,
    closed by the original endpoint, never exceeds it.
    """
    if len(stroke) == 1:
        return stroke.copy()
    out = [stroke[0]]
    anchor = stroke[0]
    seg = 0
    pos = stroke[0]
    while seg < len(stroke) - 1:
        end = stroke[seg + 1]
        if np.linalg.norm(end - anchor) < interval:
            pos = end
            seg += 1
            continue
        # first crossing of the circle |p - anchor| = interval on [pos, end]
        v = end - pos
        w = pos - anchor
        a = float(v @ v)
        if a == 0.0:
            seg += 1
            continue
        b = 2.0 * float(w @ v)
        c = float(w @ w) - interval * interval
        t = (-b + math.sqrt(max(b * b - 4.0 * a * c, 0.0))) / (2.0 * a)
        pos = pos + t * v
        out.append(pos)
        anchor = pos
    last = stroke[-1]
    if np.linalg.norm(last - out[-1]) > 1e-9:
        out.append(last)
    return np.asarray(out)


def resample(traj: Trajectory, interval: float = DEFAULT_INTERVAL) -> Trajectory:
    """Re-sample each stroke independently at uniform spacing ``interval``."""
    if interval <= 0:
        raise DataError(f"resample interval must be positive, got {interval}")
    return Trajectory([_resample_stroke(s, interval) for s in traj.strokes])


# ---------------------------------------------------------------------------
# synthetic dataset


def _ellipse(cx, cy, rx, ry, n=24, start=0.5 * math.pi, sweep=2.0 * math.pi):
    a = start + np.linspace(0.0, sweep, n)
    return np.stack([cx + rx * np.cos(a), cy + ry * np.sin(a)], axis=1)


def _poly(*pts):
    return np.asarray(pts, dtype=np.float64)


def _digit_templates() -> list[list[np.ndarray]]:
    """Stroke templates for the ten digit-like classes, roughly in [0,1]^2.

    Defined y-up, then flipped to screen orientation (y grows downward) so
    trained models accept raw pointer coordinates from the drawing UI.
    """
    arc = _ellipse
    shapes = [
        # 0: slim closed oval
        [arc(0.5, 0.5, 0.15, 0.38, n=28)],
        # 1: flag, stem, base bar
        [_poly((0.34, 0.72), (0.5, 0.9), (0.5, 0.1)), _poly((0.3, 0.1), (0.7, 0.1))],
        # 2: top arc, diagonal, base
        [np.concatenate([
            arc(0.5, 0.68, 0.2, 0.2, n=12, start=math.pi, sweep=-math.pi),
            _poly((0.7, 0.6), (0.3, 0.1), (0.72, 0.1)),
        ])],
        # 3: two right-facing bumps
        [np.concatenate([
            arc(0.47, 0.7, 0.19, 0.19, n=12, start=0.75 * math.pi, sweep=-1.4 * math.pi),
            arc(0.47, 0.31, 0.2, 0.19, n=12, start=0.5 * math.pi, sweep=-1.2 * math.pi),
        ])],
        # 4: angled stroke plus vertical stroke
        [_poly((0.62, 0.9), (0.25, 0.38), (0.78, 0.38)), _poly((0.62, 0.62), (0.62, 0.1))],
        # 5: cap, then descender into an open bowl
        [_poly((0.62, 0.9), (0.3, 0.9), (0.29, 0.6)),
         np.concatenate([
             _poly((0.29, 0.6), (0.38, 0.63)),
             arc(0.44, 0.4, 0.19, 0.21, n=14, start=0.4 * math.pi, sweep=-1.35 * math.pi),
         ])],
        # 6: sweep down into a closed loop
        [np.concatenate([
            _poly((0.6, 0.9), (0.44, 0.62), (0.36, 0.42)),
            arc(0.49, 0.28, 0.15, 0.16, n=18, start=1.1 * math.pi, sweep=2.0 * math.pi),
        ])],
        # 7: top bar, long diagonal, crossbar
        [_poly((0.26, 0.9), (0.74, 0.9), (0.4, 0.1)), _poly((0.33, 0.5), (0.62, 0.5))],
        # 8: two slim stacked loops meeting at the waist
        [np.concatenate([
            arc(0.5, 0.68, 0.11, 0.15, n=16, start=1.5 * math.pi, sweep=-2.0 * math.pi),
            arc(0.5, 0.33, 0.13, 0.17, n=16, start=0.5 * math.pi, sweep=2.0 * math.pi),
        ])],
        # 9: loop with a tail
        [np.concatenate([
            arc(0.47, 0.68, 0.14, 0.16, n=18, start=0.0, sweep=2.0 * math.pi),
            _poly((0.61, 0.68), (0.6, 0.3), (0.5, 0.1)),
        ])],
    ]
    return [[np.column_stack([s[:, 0], 1.0 - s[:, 1]]) for s in strokes]
            for strokes in shapes]


@dataclass
class SynthSpec:
    num_classes: int = 10
    samples_per_class: int = 100
    jitter: float = 0.01
    rotation_range: float = 0.15
    scale_range: tuple[float, float] = (0.8, 1.2)


def class_template(label: int) -> list[np.ndarray]:
    templates = _digit_templates()
    if not 0 <= label < len(templates):
        raise DataError(f"no stroke template for class {label}; {len(templates)} available")
    return [s.copy() for s in templates[label]]


def synth_dataset(spec: SynthSpec, seed: int) -> Dataset:
    """Deterministic jittered/rotated/scaled variants of the digit templates."""
    templates = _digit_templates()
    if spec.num_classes > len(templates):
        raise DataError(
            f"num_classes={spec.num_classes} exceeds the {len(templates)} built-in templates"
        )
    rng = np.random.default_rng(seed)
    samples = []
    for label in range(spec.num_classes):
        for k in range(spec.samples_per_class):
            angle = rng.uniform(-spec.rotation_range, spec.rotation_range)
            s = rng.uniform(*spec.scale_range)
            shift = rng.uniform(-0.2, 0.2, size=2)
            rot = np.array([[math.cos(angle), -math.sin(angle)],
                            [math.sin(angle), math.cos(angle)]])
            strokes = []
            for stroke in templates[label]:
                pts = stroke + rng.normal(0.0, spec.jitter, size=stroke.shape) if spec.jitter > 0 else stroke
                strokes.append((pts - 0.5) @ rot.T * s + 0.5 + shift)
            samples.append(Sample(label=label, trajectory=Trajectory(strokes),
                                  id=f"synth-{label}-{k}"))
    names = [str(c) for c in range(spec.num_classes)]
    return Dataset(samples=samples, num_classes=spec.num_classes, class_names=names)


# ---------------------------------------------------------------------------
# JSONL persistence
#
# One sample per line: {"label": "<name>", "id": "...", "strokes": [[[x,y],...],...]}
# A sibling classes.json lists class names in index order.


def _classes_path(path: Path) -> Path:
    return path.with_name("classes.json")


def save_jsonl(dataset: Dataset, path) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for s in dataset.samples:
            row = {
                "label": dataset.class_names[s.label],
                "id": s.id,
                "strokes": [stroke.tolist() for stroke in s.trajectory.strokes],
            }
            fh.write(json.dumps(row) + "\n")
    with open(_classes_path(path), "w", encoding="utf-8") as fh:
        json.dump(dataset.class_names, fh)


def load_jsonl(path, class_names: list[str] | None = None, require_labels: bool = True) -> Dataset:
    """Load a JSONL dataset; malformed lines are rejected with their line number.

    Class names come from the explicit argument, else a sibling classes.json,
    else the sorted set of labels present in the file.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    if class_names is None and _classes_path(path).exists():
        with open(_classes_path(path), encoding="utf-8") as fh:
            class_names = json.load(fh)

    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"line {lineno}: malformed JSON ({e.msg})") from e
            if "strokes" not in row:
                raise DataError(f"line {lineno}: missing 'strokes' field")
            if require_labels and "label" not in row:
                raise DataError(f"line {lineno}: missing 'label' field")
            try:
                traj = as_trajectory(row["strokes"])
            except DataError as e:
                raise DataError(f"line {lineno}: {e}") from e
            rows.append((lineno, row.get("label"), row.get("id", ""), traj))

    if class_names is None:
        seen = sorted({str(label) for _, label, _, _ in rows if label is not None})
        class_names = seen
    index = {name: i for i, name in enumerate(class_names)}

    samples = []
    for lineno, label, sid, traj in rows:
        if label is None:
            samples.append(Sample(label=0, trajectory=traj, id=sid))
            continue
        label = str(label)
        if label not in index:
            raise DataError(f"line {lineno}: unknown label {label!r}")
        samples.append(Sample(label=index[label], trajectory=traj, id=sid))
    return Dataset(samples=samples, num_classes=max(len(class_names), 1),
                   class_names=class_names or ["0"])
