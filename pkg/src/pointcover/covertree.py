"""Leveled ball-cover index over a point cloud.

The tree stores one root node at ``top_level`` plus ``max_depth`` covering
levels below it.  A node at level i owns the closed ball of radius
``epsilon**i`` around its center (a cloud point), and the centers at each
covering level form a non-disjoint covering of the whole cloud satisfying:

* nesting     -- every center at level i is also a center at level i-1,
* covering    -- every non-root center lies within epsilon**j of its parent's
                 center, where j is the parent's level,
* separation  -- two distinct centers at level i are more than epsilon**i
                 apart,
* level cover -- every cloud point is within epsilon**i of some level-i
                 center.

Construction is deterministic: centers are chosen by scanning points in input
order at each level, so building twice from the same cloud yields identical
trees.  ``validate_invariants`` re-checks everything with exhaustive scans and
is the test oracle for the builder.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import PointCloud


@dataclass
class CoverNode:
    node_id: int
    level: int
    center_index: int
    parent: int | None
    children: list[int] = field(default_factory=list)
    member_points: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))


@dataclass
class CoverTree:
    epsilon: float
    top_level: int
    nodes: list[CoverNode]
    cloud_id: str
    points: np.ndarray
    estimated_expansion_constant: float | None = None

    @property
    def root(self) -> CoverNode:
        return self.nodes[0]

    @property
    def covering_levels(self) -> list[int]:
        """Materialized levels below the root, in descending order."""
        return sorted({n.level for n in self.nodes if n.level != self.top_level}, reverse=True)

    def nodes_at(self, level: int) -> list[CoverNode]:
        return [n for n in self.nodes if n.level == level]

    def center(self, node_id: int) -> np.ndarray:
        return self.points[self.nodes[node_id].center_index]

    def radius(self, level: int) -> float:
        return float(self.epsilon**level)


def _pairwise_max_distance(points: np.ndarray, chunk: int = 512) -> float:
    best = 0.0
    for start in range(0, len(points), chunk):
        block = points[start : start + chunk]
        d2 = ((block[:, None, :] - points[None, :, :]) ** 2).sum(axis=2)
        best = max(best, float(d2.max()))
    return math.sqrt(best)


def _top_level_for(diameter: float, epsilon: float) -> int:
    """Smallest integer i with epsilon**i >= diameter (0 for a degenerate cloud)."""
    if diameter <= 0.0:
        return 0
    i = math.ceil(math.log(diameter) / math.log(epsilon))
    while epsilon**i < diameter:
        i += 1
    while epsilon ** (i - 1) >= diameter:
        i -= 1
    return i


def build_cover_tree(cloud: PointCloud, epsilon: float, max_depth: int = 3) -> CoverTree:
    """Build the ball-cover hierarchy for a (normalized) cloud.

    ``max_depth`` is the number of covering levels materialized below the
    root.  Raises ValueError for epsilon <= 1 or max_depth < 1.
    """
    if epsilon <= 1.0:
        raise ValueError(f"epsilon must be > 1, got {epsilon}")
    if max_depth < 1:
        raise ValueError(f"max_depth must be >= 1, got {max_depth}")
    pts = cloud.points
    n = pts.shape[0]
    diameter = _pairwise_max_distance(pts)
    top = _top_level_for(diameter, epsilon)

    nodes: list[CoverNode] = [CoverNode(node_id=0, level=top, center_index=0, parent=None)]
    prev_level_nodes = [nodes[0]]
    for level in range(top - 1, top - max_depth - 1, -1):
        radius = epsilon**level
        level_nodes: list[CoverNode] = []
        # Nesting: every center one level up reappears here, parented to itself.
        for up in prev_level_nodes:
            node = CoverNode(
                node_id=len(nodes), level=level, center_index=up.center_index, parent=up.node_id
            )
            nodes.append(node)
            level_nodes.append(node)
            up.children.append(node.node_id)
        center_idx = [nd.center_index for nd in level_nodes]
        nearest = np.linalg.norm(pts - pts[center_idx[0]], axis=1)
        for ci in center_idx[1:]:
            nearest = np.minimum(nearest, np.linalg.norm(pts - pts[ci], axis=1))
        taken = set(center_idx)
        up_centers = np.stack([pts[nd.center_index] for nd in prev_level_nodes])
        for p in range(n):
            if p in taken or nearest[p] <= radius:
                continue
            d_up = np.linalg.norm(up_centers - pts[p], axis=1)
            parent = prev_level_nodes[int(np.argmin(d_up))]
            node = CoverNode(
                node_id=len(nodes), level=level, center_index=p, parent=parent.node_id
            )
            nodes.append(node)
            level_nodes.append(node)
            parent.children.append(node.node_id)
            taken.add(p)
            nearest = np.minimum(nearest, np.linalg.norm(pts - pts[p], axis=1))
        prev_level_nodes = level_nodes

    for node in nodes:
        dist = np.linalg.norm(pts - pts[node.center_index], axis=1)
        node.member_points = np.flatnonzero(dist <= epsilon**node.level).astype(np.int64)
    return CoverTree(
        epsilon=float(epsilon),
        top_level=top,
        nodes=nodes,
        cloud_id=cloud.cloud_id,
        points=pts,
    )


def levels(tree: CoverTree) -> list[tuple[int, list[CoverNode]]]:
    """Covering levels below the root as (level, nodes), in descending order."""
    return [(lvl, tree.nodes_at(lvl)) for lvl in tree.covering_levels]


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    node_ids: tuple[int, ...] = ()


@dataclass
class ValidationReport:
    violations: list[Violation]

    @property
    def ok(self) -> bool:
        return not self.violations

    def summary(self) -> str:
        if self.ok:
            return "ok"
        counts: dict[str, int] = {}
        for v in self.violations:
            counts[v.kind] = counts.get(v.kind, 0) + 1
        return ", ".join(f"{k}: {c}" for k, c in sorted(counts.items()))


def validate_invariants(tree: CoverTree, cloud: PointCloud) -> ValidationReport:
    """Exhaustively check every tree invariant against the cloud.

    Violations are returned as data, never raised; the checks are brute-force
    scans independent of the construction path.
    """
    pts = cloud.points
    eps = tree.epsilon
    out: list[Violation] = []

    roots = [nd for nd in tree.nodes if nd.level == tree.top_level]
    if len(roots) != 1:
        out.append(Violation("root", f"expected one root at level {tree.top_level}, found {len(roots)}"))

    all_levels = sorted({nd.level for nd in tree.nodes}, reverse=True)
    centers_by_level = {
        lvl: {nd.center_index for nd in tree.nodes if nd.level == lvl} for lvl in all_levels
    }
    for upper, lower in zip(all_levels, all_levels[1:]):
        missing = centers_by_level[upper] - centers_by_level[lower]
        if missing:
            out.append(
                Violation(
                    "nesting",
                    f"centers {sorted(missing)} at level {upper} missing from level {lower}",
                )
            )

    for nd in tree.nodes:
        if nd.parent is None:
            continue
        parent = tree.nodes[nd.parent]
        if nd.level != parent.level - 1:
            out.append(
                Violation(
                    "structure",
                    f"node {nd.node_id} at level {nd.level} under parent at level {parent.level}",
                    (nd.node_id, parent.node_id),
                )
            )
        dist = float(np.linalg.norm(pts[nd.center_index] - pts[parent.center_index]))
        if dist > eps**parent.level:
            out.append(
                Violation(
                    "covering",
                    f"node {nd.node_id} lies {dist:.6g} from parent {parent.node_id}, "
                    f"radius {eps**parent.level:.6g}",
                    (nd.node_id, parent.node_id),
                )
            )

    for lvl in all_levels:
        level_nodes = tree.nodes_at(lvl)
        radius = eps**lvl
        centers = np.stack([pts[nd.center_index] for nd in level_nodes])
        if len(level_nodes) > 1:
            diff = centers[:, None, :] - centers[None, :, :]
            dmat = np.sqrt((diff**2).sum(axis=2))
            for a in range(len(level_nodes)):
                for b in range(a + 1, len(level_nodes)):
                    if level_nodes[a].center_index == level_nodes[b].center_index:
                        out.append(
                            Violation(
                                "separation",
                                f"duplicate center at level {lvl}",
                                (level_nodes[a].node_id, level_nodes[b].node_id),
                            )
                        )
                    elif dmat[a, b] <= radius:
                        out.append(
                            Violation(
                                "separation",
                                f"centers {dmat[a, b]:.6g} apart at level {lvl}, radius {radius:.6g}",
                                (level_nodes[a].node_id, level_nodes[b].node_id),
                            )
                        )
        nearest = np.sqrt(((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)).min(axis=1)
        uncovered = np.flatnonzero(nearest > radius)
        if uncovered.size:
            out.append(
                Violation(
                    "level_covering",
                    f"{uncovered.size} points uncovered at level {lvl} "
                    f"(first: point {int(uncovered[0])})",
                )
            )
        for nd in level_nodes:
            dist = np.linalg.norm(pts - pts[nd.center_index], axis=1)
            expect = np.flatnonzero(dist <= radius)
            if not np.array_equal(np.sort(nd.member_points), expect):
                out.append(
                    Violation(
                        "member_points",
                        f"node {nd.node_id} members differ from brute-force ball scan",
                        (nd.node_id,),
                    )
                )
    return ValidationReport(out)


def estimate_expansion_constant(
    cloud: PointCloud, sample: int = 64, seed: int = 0, num_radii: int = 10
) -> float:
    """Empirical doubling estimate: max of |B(p, 2r)| / |B(p, r)|.

    Sampled points and dyadic radii r = diameter / 2**k; counts are closed-ball
    point counts in the cloud (denominator at least 1).  Radii so small that
    the inner ball holds only the sample point itself are skipped: on discrete
    data they measure grid spacing, not growth.
    """
    if sample > cloud.n:
        raise ValueError(f"sample {sample} exceeds cloud size {cloud.n}")
    pts = cloud.points
    diameter = _pairwise_max_distance(pts)
    if cloud.n == 1 or diameter == 0.0:
        return 1.0
    rng = np.random.default_rng(seed)
    picks = rng.choice(cloud.n, size=sample, replace=False)
    best = 1.0
    for p in picks:
        dist = np.linalg.norm(pts - pts[p], axis=1)
        for k in range(1, num_radii + 1):
            r = diameter / 2.0**k
            inner = max(int((dist <= r).sum()), 1)
            if inner < 2:
                continue
            outer = int((dist <= 2.0 * r).sum())
            best = max(best, outer / inner)
    return best


def tree_to_json(tree: CoverTree) -> dict:
    return {
        "epsilon": tree.epsilon,
        "top_level": tree.top_level,
        "cloud": tree.cloud_id,
        "expansion_constant": tree.estimated_expansion_constant,
        "nodes": [
            {
                "id": nd.node_id,
                "level": nd.level,
                "center_index": nd.center_index,
                "parent": nd.parent,
                "children": list(nd.children),
                "member_points": [int(i) for i in nd.member_points],
            }
            for nd in tree.nodes
        ],
    }


def tree_from_json(data: dict, cloud: PointCloud) -> CoverTree:
    """Rebuild a tree from its JSON form; coordinates come from the cloud."""
    nodes = []
    for item in sorted(data["nodes"], key=lambda x: x["id"]):
        idx = int(item["center_index"])
        if not 0 <= idx < cloud.n:
            raise ValueError(f"node {item['id']}: center index {idx} outside cloud of {cloud.n}")
        nodes.append(
            CoverNode(
                node_id=int(item["id"]),
                level=int(item["level"]),
                center_index=idx,
                parent=None if item["parent"] is None else int(item["parent"]),
                children=[int(c) for c in item["children"]],
                member_points=np.asarray(item["member_points"], dtype=np.int64),
            )
        )
    return CoverTree(
        epsilon=float(data["epsilon"]),
        top_level=int(data["top_level"]),
        nodes=nodes,
        cloud_id=data.get("cloud", cloud.cloud_id),
        points=cloud.points,
        estimated_expansion_constant=data.get("expansion_constant"),
    )


def save_tree(path, tree: CoverTree) -> None:
    Path(path).write_text(json.dumps(tree_to_json(tree)) + "\n")


def load_tree(path, cloud: PointCloud) -> CoverTree:
    return tree_from_json(json.loads(Path(path).read_text()), cloud)
