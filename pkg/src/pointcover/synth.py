"""Synthetic shape dataset generator for desk-scale experiments.

Six surface primitives (sphere, cube, cylinder, cone, torus, plane) are
sampled in a canonical pose, then each generated cloud gets a random rotation,
mild per-axis scale jitter, and gaussian coordinate noise.  Files are plain
xyz text plus a JSON manifest, fully determined by the seed.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .geometry import ManifestEntry, write_manifest

SHAPES = ("sphere", "cube", "cylinder", "cone", "torus", "plane")


def shape_points(kind: str, n: int, rng: np.random.Generator) -> np.ndarray:
    """Sample n points from the canonical surface of a primitive.

    Shapes are centered at the origin with extents near one; the canonical
    sphere has radius exactly 0.5.
    """
    if kind == "sphere":
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return 0.5 * v
    if kind == "cube":
        face = rng.integers(0, 6, size=n)
        uv = rng.uniform(-0.5, 0.5, size=(n, 2))
        pts = np.empty((n, 3))
        axis = face % 3
        side = np.where(face < 3, 0.5, -0.5)
        for i in range(n):
            others = [a for a in range(3) if a != axis[i]]
            pts[i, axis[i]] = side[i]
            pts[i, others[0]] = uv[i, 0]
            pts[i, others[1]] = uv[i, 1]
        return pts
    if kind == "cylinder":
        r, h = 0.35, 1.0
        lateral = 2 * np.pi * r * h
        caps = 2 * np.pi * r**2
        pts = np.empty((n, 3))
        on_side = rng.random(n) < lateral / (lateral + caps)
        theta = rng.uniform(0, 2 * np.pi, size=n)
        for i in range(n):
            if on_side[i]:
                pts[i] = [r * np.cos(theta[i]), r * np.sin(theta[i]), rng.uniform(-h / 2, h / 2)]
            else:
                rad = r * np.sqrt(rng.random())
                z = h / 2 if rng.random() < 0.5 else -h / 2
                pts[i] = [rad * np.cos(theta[i]), rad * np.sin(theta[i]), z]
        return pts
    if kind == "cone":
        r, h = 0.5, 1.0
        slant = np.pi * r * np.hypot(r, h)
        base = np.pi * r**2
        pts = np.empty((n, 3))
        theta = rng.uniform(0, 2 * np.pi, size=n)
        for i in range(n):
            if rng.random() < slant / (slant + base):
                # Uniform over the lateral surface: radius density grows linearly.
                frac = np.sqrt(rng.random())
                pts[i] = [
                    frac * r * np.cos(theta[i]),
                    frac * r * np.sin(theta[i]),
                    h / 2 - frac * h,
                ]
            else:
                rad = r * np.sqrt(rng.random())
                pts[i] = [rad * np.cos(theta[i]), rad * np.sin(theta[i]), -h / 2]
        return pts
    if kind == "torus":
        R, r = 0.35, 0.15
        pts = np.empty((n, 3))
        count = 0
        while count < n:
            u = rng.uniform(0, 2 * np.pi)
            v = rng.uniform(0, 2 * np.pi)
            # Rejection step keeps the sampling uniform over the surface area.
            if rng.random() > (R + r * np.cos(v)) / (R + r):
                continue
            pts[count] = [
                (R + r * np.cos(v)) * np.cos(u),
                (R + r * np.cos(v)) * np.sin(u),
                r * np.sin(v),
            ]
            count += 1
        return pts
    if kind == "plane":
        uv = rng.uniform(-0.5, 0.5, size=(n, 2))
        return np.column_stack([uv[:, 0], uv[:, 1], np.zeros(n)])
    raise ValueError(f"unknown shape kind {kind!r}; choose from {SHAPES}")


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Haar-uniform rotation matrix via QR of a gaussian matrix."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def make_cloud(kind: str, n: int, noise: float, rng: np.random.Generator) -> np.ndarray:
    """One jittered instance: canonical shape, random pose, scale jitter, noise."""
    pts = shape_points(kind, n, rng)
    pts = pts @ random_rotation(rng).T
    pts = pts * rng.uniform(0.9, 1.1, size=3)
    if noise > 0:
        pts = pts + rng.normal(scale=noise, size=pts.shape)
    return pts


def synthesize_dataset(outdir, classes: int, per_class: int, points: int, noise: float,
                       seed: int) -> Path:
    """Write a labeled xyz dataset and return the manifest path.

    Class labels are 1..classes, mapped onto the shape list in order; at most
    len(SHAPES) classes are available.
    """
    if not 1 <= classes <= len(SHAPES):
        raise ValueError(f"classes must be in 1..{len(SHAPES)}, got {classes}")
    if per_class < 1 or points < 1:
        raise ValueError(f"need per_class >= 1 and points >= 1, got {per_class}, {points}")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for ci in range(classes):
        kind = SHAPES[ci]
        for j in range(per_class):
            pts = make_cloud(kind, points, noise, rng)
            name = f"{kind}_{j:03d}.xyz"
            with (outdir / name).open("w") as fh:
                for row in pts:
                    fh.write("%.8f %.8f %.8f\n" % tuple(row))
            entries.append(ManifestEntry(path=name, class_label=ci + 1))
    manifest = outdir / "manifest.json"
    write_manifest(manifest, entries)
    return manifest
