"""Point cloud representation, ingestion, normalization, and subsampling.

A cloud is an ordered set of n points in R^d (d >= 2), optionally carrying a
class label for the whole cloud and one integer part label per point.  Clouds
are immutable after construction; every operation returns a new cloud.

File formats
------------
xyz text: one point per line, whitespace-separated decimal coordinates, an
optional trailing integer part-label column, ``#`` comment lines ignored.

manifest: a JSON array of ``{"path": <relative xyz path>, "class": <int>}``
entries describing a labeled collection.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, ParseError

_INT_TOKEN = re.compile(r"[+-]?\d+\Z")


@dataclass(frozen=True)
class PointCloud:
    """n points of dimension d with optional class and per-point part labels."""

    points: np.ndarray
    class_label: int | None = None
    part_labels: np.ndarray | None = None
    cloud_id: str = ""

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2:
            raise ValueError(f"points must be a 2-d array, got shape {pts.shape}")
        if pts.shape[0] < 1:
            raise ValueError("a point cloud needs at least one point")
        if pts.shape[1] < 2:
            raise ValueError(f"point dimension must be >= 2, got {pts.shape[1]}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.part_labels is not None:
            labels = np.asarray(self.part_labels, dtype=np.int64)
            if labels.shape != (pts.shape[0],):
                raise ValueError(
                    f"part_labels length {labels.shape} does not match n={pts.shape[0]}"
                )
            labels.setflags(write=False)
            object.__setattr__(self, "part_labels", labels)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def with_points(self, points: np.ndarray, part_labels=None) -> "PointCloud":
        return PointCloud(
            points,
            class_label=self.class_label,
            part_labels=self.part_labels if part_labels is None else part_labels,
            cloud_id=self.cloud_id,
        )


def _detect_label_column(rows: list[list[str]]) -> bool:
    """Decide whether the trailing column is a part label.

    The last column is read as labels when every row ends in an integer-looking
    token and either there are at least four columns or some coordinate token
    is written with a fractional part.  Three columns of bare integers are read
    as plain 3-d coordinates.  Pass ``labels=`` explicitly to override.
    """
    width = len(rows[0])
    if width < 3:
        return False
    if not all(_INT_TOKEN.match(row[-1]) for row in rows):
        return False
    if width >= 4:
        return True
    return any(
        not _INT_TOKEN.match(tok) for row in rows for tok in row[:-1]
    )


def load_cloud(path, labels: bool | str = "auto", cloud_id: str | None = None) -> PointCloud:
    """Parse an xyz text file into a PointCloud.

    ``labels`` may be True/False to force the trailing-column interpretation,
    or "auto" to apply the documented heuristic.  Raises ParseError with the
    offending line number for ragged or non-numeric rows and DataError for an
    empty file.
    """
    path = Path(path)
    rows: list[list[str]] = []
    line_numbers: list[int] = []
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        tokens = stripped.split()
        if rows and len(tokens) != len(rows[0]):
            raise ParseError(
                f"{path}: line {lineno}: expected {len(rows[0])} columns, got {len(tokens)}"
            )
        rows.append(tokens)
        line_numbers.append(lineno)
    if not rows:
        raise DataError(f"{path}: empty cloud (no data lines)")

    if labels == "auto":
        has_labels = _detect_label_column(rows)
    else:
        has_labels = bool(labels)
    ncols = len(rows[0])
    if has_labels and ncols - 1 < 2:
        raise ParseError(f"{path}: line {line_numbers[0]}: label column leaves d < 2")

    coord_width = ncols - 1 if has_labels else ncols
    coords = np.empty((len(rows), coord_width), dtype=np.float64)
    part_labels = np.empty(len(rows), dtype=np.int64) if has_labels else None
    for i, (tokens, lineno) in enumerate(zip(rows, line_numbers)):
        try:
            coords[i] = [float(t) for t in tokens[:coord_width]]
            if has_labels:
                part_labels[i] = int(tokens[-1])
        except ValueError as exc:
            raise ParseError(f"{path}: line {lineno}: {exc}") from exc
    return PointCloud(
        coords,
        part_labels=part_labels,
        cloud_id=cloud_id if cloud_id is not None else path.stem,
    )


def save_cloud(path, cloud: PointCloud, fmt: str = "%.8f") -> None:
    """Write a cloud back to xyz text (with a label column when present)."""
    path = Path(path)
    with path.open("w") as fh:
        for i in range(cloud.n):
            coords = " ".join(fmt % v for v in cloud.points[i])
            if cloud.part_labels is not None:
                fh.write(f"{coords} {int(cloud.part_labels[i])}\n")
            else:
                fh.write(coords + "\n")


def normalize_unit_cube(cloud: PointCloud) -> PointCloud:
    """Translate to the origin and scale uniformly into the unit cube.

    All axes are divided by the single largest axis extent so aspect ratio and
    distance ratios are preserved; a degenerate cloud (all points identical)
    maps to the all-zeros point.
    """
    mins = cloud.points.min(axis=0)
    shifted = cloud.points - mins
    extent = float((cloud.points.max(axis=0) - mins).max())
    if extent == 0.0:
        return cloud.with_points(np.zeros_like(cloud.points))
    return cloud.with_points(shifted / extent)


def subsample(cloud: PointCloud, k: int, seed: int) -> PointCloud:
    """Uniform random sample of k points without replacement, seeded.

    Part labels follow their points.  Raises ValueError when k is out of
    range.
    """
    if not 1 <= k <= cloud.n:
        raise ValueError(f"cannot sample k={k} from a cloud of n={cloud.n} points")
    rng = np.random.default_rng(seed)
    idx = rng.choice(cloud.n, size=k, replace=False)
    labels = cloud.part_labels[idx] if cloud.part_labels is not None else None
    return PointCloud(
        cloud.points[idx],
        class_label=cloud.class_label,
        part_labels=labels,
        cloud_id=cloud.cloud_id,
    )


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    class_label: int


def read_manifest(path) -> list[ManifestEntry]:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, list):
        raise ParseError(f"{path}: manifest must be a JSON array")
    entries = []
    for i, item in enumerate(raw):
        if not isinstance(item, dict) or "path" not in item or "class" not in item:
            raise ParseError(f"{path}: entry {i} must be an object with 'path' and 'class'")
        entries.append(ManifestEntry(path=str(item["path"]), class_label=int(item["class"])))
    if not entries:
        raise DataError(f"{path}: empty manifest")
    return entries


def write_manifest(path, entries: list[ManifestEntry]) -> None:
    payload = [{"path": e.path, "class": e.class_label} for e in entries]
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def load_entry(entry: ManifestEntry, root) -> PointCloud:
    """Load one manifest entry; the cloud id is the manifest-relative path."""
    cloud = load_cloud(Path(root) / entry.path, cloud_id=entry.path)
    return PointCloud(
        cloud.points,
        class_label=entry.class_label,
        part_labels=cloud.part_labels,
        cloud_id=entry.path,
    )
