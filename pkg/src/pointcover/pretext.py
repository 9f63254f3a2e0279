"""Self-supervised label generation from a ball-cover hierarchy.

Two label sets are derived from the covering levels of a tree:

* distance regression -- every unordered pair of same-level centers, labeled
  with the euclidean distance between the two centers;
* quadrant classification -- every parent-child edge between consecutive
  covering levels, labeled 1..4 by the sign pattern of the first two
  coordinates of (child center - parent center).

Records serialize to JSON lines, one record per pair:
``{"task": "R"|"C", "cloud": id, "level": i, "a": node, "b": node, "label": x}``
(for "C" records ``level`` is the parent's level and ``a``/``b`` are the
parent/child node ids).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .covertree import CoverTree


@dataclass(frozen=True)
class RegressionPair:
    level: int
    node_a: int
    node_b: int
    distance: float


@dataclass(frozen=True)
class QuadrantPair:
    parent_level: int
    parent: int
    child: int
    quadrant: int


class PretextRecord(NamedTuple):
    task: str
    level: int
    a: int
    b: int
    label: float


@dataclass
class PretextDataset:
    cloud_id: str
    regression_pairs: list[RegressionPair] = field(default_factory=list)
    quadrant_pairs: list[QuadrantPair] = field(default_factory=list)
    epsilon: float | None = None
    levels_used: list[int] = field(default_factory=list)

    def records(self) -> list[PretextRecord]:
        recs = [
            PretextRecord("R", p.level, p.node_a, p.node_b, p.distance)
            for p in self.regression_pairs
        ]
        recs += [
            PretextRecord("C", p.parent_level, p.parent, p.child, float(p.quadrant))
            for p in self.quadrant_pairs
        ]
        return recs

    def __len__(self) -> int:
        return len(self.regression_pairs) + len(self.quadrant_pairs)


def quadrant_of(parent_center: np.ndarray, child_center: np.ndarray) -> int:
    """Quadrant label in {1..4} from the signs of the first two offset coords.

    Zero offsets count as non-negative, so a child sitting exactly on its
    parent's center gets quadrant 1.
    """
    parent_center = np.asarray(parent_center, dtype=np.float64)
    child_center = np.asarray(child_center, dtype=np.float64)
    if parent_center.shape != child_center.shape or parent_center.shape[0] < 2:
        raise ValueError(
            f"centers must share a dimension >= 2, got {parent_center.shape} and {child_center.shape}"
        )
    dx = child_center[0] - parent_center[0]
    dy = child_center[1] - parent_center[1]
    if dx >= 0.0:
        return 1 if dy >= 0.0 else 4
    return 2 if dy >= 0.0 else 3


def gen_regression_pairs(tree: CoverTree) -> list[RegressionPair]:
    """All unordered same-level center pairs with their distances.

    Pairs are canonicalized with the smaller node id first; a level with a
    single center contributes nothing.
    """
    pairs = []
    for level in tree.covering_levels:
        ids = sorted(nd.node_id for nd in tree.nodes_at(level))
        for a, b in combinations(ids, 2):
            dist = float(np.linalg.norm(tree.center(a) - tree.center(b)))
            pairs.append(RegressionPair(level=level, node_a=a, node_b=b, distance=dist))
    return pairs


def gen_quadrant_pairs(tree: CoverTree) -> list[QuadrantPair]:
    """One labeled pair per parent-child edge between consecutive covering levels.

    Parents range over covering levels that have a level below them; nodes at
    the deepest level contribute no pairs as parents.
    """
    covering = set(tree.covering_levels)
    lowest = min(covering) if covering else None
    pairs = []
    for nd in tree.nodes:
        if nd.level not in covering or nd.level == lowest:
            continue
        for child_id in nd.children:
            child = tree.nodes[child_id]
            pairs.append(
                QuadrantPair(
                    parent_level=nd.level,
                    parent=nd.node_id,
                    child=child_id,
                    quadrant=quadrant_of(tree.center(nd.node_id), tree.center(child_id)),
                )
            )
    return pairs


def build_pretext_dataset(tree: CoverTree) -> PretextDataset:
    return PretextDataset(
        cloud_id=tree.cloud_id,
        regression_pairs=gen_regression_pairs(tree),
        quadrant_pairs=gen_quadrant_pairs(tree),
        epsilon=tree.epsilon,
        levels_used=tree.covering_levels,
    )


def validate_dataset(dataset: PretextDataset, tree: CoverTree) -> list[str]:
    """Cross-check stored labels and node references against the tree."""
    issues = []
    valid_ids = {nd.node_id for nd in tree.nodes}
    for p in dataset.regression_pairs:
        if p.node_a not in valid_ids or p.node_b not in valid_ids:
            issues.append(f"R pair ({p.node_a}, {p.node_b}) references unknown node")
            continue
        d = float(np.linalg.norm(tree.center(p.node_a) - tree.center(p.node_b)))
        if abs(d - p.distance) > 1e-12:
            issues.append(f"R pair ({p.node_a}, {p.node_b}) label {p.distance} != {d}")
    for q in dataset.quadrant_pairs:
        if q.parent not in valid_ids or q.child not in valid_ids:
            issues.append(f"C pair ({q.parent}, {q.child}) references unknown node")
            continue
        lbl = quadrant_of(tree.center(q.parent), tree.center(q.child))
        if lbl != q.quadrant:
            issues.append(f"C pair ({q.parent}, {q.child}) label {q.quadrant} != {lbl}")
    return issues


def write_pretext_jsonl(path, datasets) -> None:
    if isinstance(datasets, PretextDataset):
        datasets = [datasets]
    with Path(path).open("w") as fh:
        for ds in datasets:
            for p in ds.regression_pairs:
                fh.write(
                    json.dumps(
                        {
                            "task": "R",
                            "cloud": ds.cloud_id,
                            "level": p.level,
                            "a": p.node_a,
                            "b": p.node_b,
                            "label": p.distance,
                        }
                    )
                    + "\n"
                )
            for q in ds.quadrant_pairs:
                fh.write(
                    json.dumps(
                        {
                            "task": "C",
                            "cloud": ds.cloud_id,
                            "level": q.parent_level,
                            "a": q.parent,
                            "b": q.child,
                            "label": q.quadrant,
                        }
                    )
                    + "\n"
                )


def read_pretext_jsonl(path) -> list[PretextDataset]:
    """Group records back into per-cloud datasets (epsilon is not stored)."""
    by_cloud: dict[str, PretextDataset] = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        ds = by_cloud.setdefault(rec["cloud"], PretextDataset(cloud_id=rec["cloud"]))
        if rec["task"] == "R":
            ds.regression_pairs.append(
                RegressionPair(
                    level=int(rec["level"]),
                    node_a=int(rec["a"]),
                    node_b=int(rec["b"]),
                    distance=float(rec["label"]),
                )
            )
        elif rec["task"] == "C":
            ds.quadrant_pairs.append(
                QuadrantPair(
                    parent_level=int(rec["level"]),
                    parent=int(rec["a"]),
                    child=int(rec["b"]),
                    quadrant=int(rec["label"]),
                )
            )
        else:
            raise ValueError(f"unknown pretext task {rec['task']!r}")
    for ds in by_cloud.values():
        ds.levels_used = sorted(
            {p.level for p in ds.regression_pairs}
            | {q.parent_level for q in ds.quadrant_pairs}
            | {q.parent_level - 1 for q in ds.quadrant_pairs},
            reverse=True,
        )
    return list(by_cloud.values())
