"""Two-branch self-supervised network over ball-cover pretext labels.

A shared pointwise extractor maps every point to a 128-d embedding.  Each ball
is summarized by the centroid of its member points' embeddings, pushed through
a per-task branch to 256 dims; a labeled pair of balls is the concatenation of
its two branch vectors (first-listed ball first), classified into a quadrant
(task C, cross-entropy) or regressed to a center distance (task R, squared
error).  Both task losses backpropagate into the extractor.

Training batches whole clouds: per optimizer step the ball vectors of a group
of clouds are stacked so branch and head batchnorm see the group, while the
extractor necessarily runs per cloud.  Losses are mean-reduced over the
group's records per task and combined as ``loss_C + lam * loss_R``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autonet import Adam, Affine, BatchNorm, Dropout, LeakyReLU, Stack, cross_entropy, load_arrays, mse, save_arrays
from .covertree import CoverNode, CoverTree
from .episodes import Episode, assert_support_only
from .geometry import PointCloud
from .pretext import PretextRecord

NUM_QUADRANTS = 4


def shared_mlp(width_in: int, widths, rng, slope: float = 0.2, bn_bypass_below: int = 0) -> Stack:
    layers = []
    w = width_in
    for wo in widths:
        layers += [
            Affine(w, wo, rng),
            BatchNorm(wo, bypass_below=bn_bypass_below),
            LeakyReLU(slope),
        ]
        w = wo
    return Stack(layers)


def pair_head(width_in: int, hidden: int, width_out: int, rng, slope: float = 0.2,
              dropout_keep: float = 0.5, bn_bypass_below: int = 0) -> Stack:
    return Stack(
        [
            Affine(width_in, hidden, rng),
            BatchNorm(hidden, bypass_below=bn_bypass_below),
            LeakyReLU(slope),
            Dropout(dropout_keep),
            Affine(hidden, width_out, rng),
        ]
    )


class SslModel:
    """Extractor, two branches, and two pair heads with named parameters.

    Widths default to the production sizes (extractor d->32->64->128, branches
    128->64->128->256, heads 512->256->out) but are configurable so gradient
    tests can run on small instances.
    """

    def __init__(self, d: int = 3, extractor_widths=(32, 64, 128),
                 branch_widths=(64, 128, 256), head_hidden: int = 256,
                 slope: float = 0.2, dropout_keep: float = 0.5, lam: float = 1.0,
                 seed: int = 0, bn_bypass_below: int = 0):
        self.d = d
        self.extractor_widths = tuple(extractor_widths)
        self.branch_widths = tuple(branch_widths)
        self.head_hidden = head_hidden
        self.slope = slope
        self.dropout_keep = dropout_keep
        self.lam = lam
        self.seed = seed
        self.bn_bypass_below = bn_bypass_below

        rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(5)]
        feat = self.extractor_widths[-1]
        ballw = self.branch_widths[-1]
        self.extractor = shared_mlp(d, extractor_widths, rngs[0], slope, bn_bypass_below)
        self.branch_c = shared_mlp(feat, branch_widths, rngs[1], slope, bn_bypass_below)
        self.branch_r = shared_mlp(feat, branch_widths, rngs[2], slope, bn_bypass_below)
        self.head_c = pair_head(2 * ballw, head_hidden, NUM_QUADRANTS, rngs[3], slope,
                                dropout_keep, bn_bypass_below)
        self.head_r = pair_head(2 * ballw, head_hidden, 1, rngs[4], slope,
                                dropout_keep, bn_bypass_below)

    def components(self) -> dict[str, Stack]:
        return {
            "extractor": self.extractor,
            "branch_c": self.branch_c,
            "branch_r": self.branch_r,
            "head_c": self.head_c,
            "head_r": self.head_r,
        }

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for comp, stack in self.components().items():
            out.update(stack.param_items(prefix=comp + "."))
        return out

    def state(self) -> dict[str, np.ndarray]:
        out = {}
        for comp, stack in self.components().items():
            out.update(stack.state_items(prefix=comp + "."))
        return out

    def config_meta(self) -> dict:
        return {
            "d": self.d,
            "extractor_widths": list(self.extractor_widths),
            "branch_widths": list(self.branch_widths),
            "head_hidden": self.head_hidden,
            "slope": self.slope,
            "dropout_keep": self.dropout_keep,
            "lam": self.lam,
            "seed": self.seed,
            "bn_bypass_below": self.bn_bypass_below,
        }


def embed_points(model: SslModel, cloud) -> np.ndarray:
    """Eval-mode per-point embeddings, shape (n, feature_width)."""
    points = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    emb, _ = model.extractor.forward(points, mode="eval")
    return emb


def ball_vector(embeddings: np.ndarray, node: CoverNode) -> np.ndarray:
    """Centroid of the member points' embeddings."""
    if node.member_points.size == 0:
        raise RuntimeError(f"node {node.node_id} has no member points")
    return embeddings[node.member_points].mean(axis=0)


@dataclass
class _TaskBlock:
    cloud_index: int
    members: list[np.ndarray]
    ia: np.ndarray
    ib: np.ndarray
    labels: np.ndarray
    n_balls: int


@dataclass
class PretextResult:
    loss_c: float
    loss_r: float
    count_c: int
    count_r: int
    logits: np.ndarray | None
    preds: np.ndarray | None

    def combined(self, lam: float) -> float:
        return self.loss_c + lam * self.loss_r


class _PretextPass:
    """One differentiable pass over a group of clouds' pretext records.

    Keeps every intermediate needed by ``backward``; the rng order is fixed
    (extractor per cloud, then branch/head C, then branch/head R) so fixed
    seeds give bit-identical passes.
    """

    def __init__(self, model: SslModel, clouds, mode: str = "train",
                 rng: np.random.Generator | None = None):
        self.model = model
        self.emb: dict[int, np.ndarray] = {}
        self.emb_tapes: dict[int, object] = {}
        self.task: dict[str, dict] = {}

        involved = set()
        per_task_blocks: dict[str, list[_TaskBlock]] = {"C": [], "R": []}
        for ci, (points, tree, records) in enumerate(clouds):
            for task in ("C", "R"):
                trecs = [r for r in records if r.task == task]
                if not trecs:
                    continue
                involved.add(ci)
                node_ids = sorted({r.a for r in trecs} | {r.b for r in trecs})
                row = {nid: k for k, nid in enumerate(node_ids)}
                members = [np.asarray(tree.nodes[nid].member_points) for nid in node_ids]
                if any(m.size == 0 for m in members):
                    raise RuntimeError("encountered a ball with no member points")
                per_task_blocks[task].append(
                    _TaskBlock(
                        cloud_index=ci,
                        members=members,
                        ia=np.array([row[r.a] for r in trecs], dtype=np.int64),
                        ib=np.array([row[r.b] for r in trecs], dtype=np.int64),
                        labels=np.array([r.label for r in trecs], dtype=np.float64),
                        n_balls=len(node_ids),
                    )
                )
        for ci in sorted(involved):
            points = clouds[ci][0]
            pts = points.points if isinstance(points, PointCloud) else points
            self.emb[ci], self.emb_tapes[ci] = model.extractor.forward(pts, mode, rng)

        for task, branch, head in (("C", model.branch_c, model.head_c),
                                   ("R", model.branch_r, model.head_r)):
            blocks = per_task_blocks[task]
            if not blocks:
                continue
            ball_rows = []
            ia_parts, ib_parts, label_parts = [], [], []
            offset = 0
            for blk in blocks:
                emb = self.emb[blk.cloud_index]
                ball_rows.append(np.stack([emb[m].mean(axis=0) for m in blk.members]))
                ia_parts.append(blk.ia + offset)
                ib_parts.append(blk.ib + offset)
                label_parts.append(blk.labels)
                offset += blk.n_balls
            balls = np.vstack(ball_rows)
            ia = np.concatenate(ia_parts)
            ib = np.concatenate(ib_parts)
            labels = np.concatenate(label_parts)
            z, branch_tape = branch.forward(balls, mode, rng)
            pair = np.hstack([z[ia], z[ib]])
            out, head_tape = head.forward(pair, mode, rng)
            if task == "C":
                idx = labels.astype(np.int64) - 1
                if idx.min() < 0 or idx.max() >= NUM_QUADRANTS:
                    raise ValueError("quadrant labels must lie in {1..4}")
                loss_sum, grad_sum = cross_entropy(out, idx, reduction="sum")
            else:
                loss_sum, grad_sum = mse(out, labels, reduction="sum")
            self.task[task] = {
                "blocks": blocks,
                "ia": ia,
                "ib": ib,
                "branch_tape": branch_tape,
                "head_tape": head_tape,
                "out": out,
                "loss_sum": loss_sum,
                "grad_sum": grad_sum,
                "count": len(labels),
                "width": z.shape[1],
                "n_balls": offset,
            }

    def result(self) -> PretextResult:
        tc = self.task.get("C")
        tr = self.task.get("R")
        return PretextResult(
            loss_c=tc["loss_sum"] / tc["count"] if tc else 0.0,
            loss_r=tr["loss_sum"] / tr["count"] if tr else 0.0,
            count_c=tc["count"] if tc else 0,
            count_r=tr["count"] if tr else 0,
            logits=tc["out"] if tc else None,
            preds=tr["out"] if tr else None,
        )

    def backward(self, weight_c: float = 1.0, weight_r: float | None = None) -> dict[str, np.ndarray]:
        """Gradients of weight_c * mean_loss_C + weight_r * mean_loss_R."""
        model = self.model
        if weight_r is None:
            weight_r = model.lam
        grads: dict[str, np.ndarray] = {}

        def accumulate(stack: Stack, prefix: str, stack_grads) -> None:
            for key, arr in stack.grad_items(stack_grads, prefix=prefix + "."):
                if key in grads:
                    grads[key] += arr
                else:
                    grads[key] = arr

        g_emb: dict[int, np.ndarray] = {
            ci: np.zeros_like(emb) for ci, emb in self.emb.items()
        }
        for task, weight, branch, head, comp_b, comp_h in (
            ("C", weight_c, model.branch_c, model.head_c, "branch_c", "head_c"),
            ("R", weight_r, model.branch_r, model.head_r, "branch_r", "head_r"),
        ):
            t = self.task.get(task)
            if t is None:
                continue
            upstream = t["grad_sum"] * (weight / t["count"])
            g_pair, head_grads = head.backward(t["head_tape"], upstream)
            accumulate(head, comp_h, head_grads)
            w = t["width"]
            g_z = np.zeros((t["n_balls"], w))
            np.add.at(g_z, t["ia"], g_pair[:, :w])
            np.add.at(g_z, t["ib"], g_pair[:, w:])
            g_balls, branch_grads = branch.backward(t["branch_tape"], g_z)
            accumulate(branch, comp_b, branch_grads)
            offset = 0
            for blk in t["blocks"]:
                target = g_emb[blk.cloud_index]
                for k, m in enumerate(blk.members):
                    target[m] += g_balls[offset + k] / m.size
                offset += blk.n_balls
        for ci in sorted(g_emb):
            _, ext_grads = model.extractor.backward(self.emb_tapes[ci], g_emb[ci])
            accumulate(model.extractor, "extractor", ext_grads)
        return grads


def pretext_forward(model: SslModel, cloud, tree: CoverTree, records: list[PretextRecord],
                    mode: str = "train", rng: np.random.Generator | None = None):
    """Run one cloud's pretext records through the full pipeline.

    Returns (PretextResult, tape); hand the tape to ``pretext_backward`` for
    gradients.  Losses are mean-reduced per task; an absent task reports loss
    0.0 with count 0.
    """
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    p = _PretextPass(model, [(pts, tree, records)], mode=mode, rng=rng)
    return p.result(), p


def pretext_backward(model: SslModel, tape: _PretextPass, weight_c: float = 1.0,
                     weight_r: float | None = None) -> dict[str, np.ndarray]:
    if tape.model is not model:
        raise ValueError("tape was recorded by a different model")
    return tape.backward(weight_c=weight_c, weight_r=weight_r)


@dataclass
class PretextCloud:
    cloud_id: str
    points: np.ndarray
    tree: CoverTree
    records: list[PretextRecord]


@dataclass
class PretrainConfig:
    epochs: int = 200
    batch_clouds: int = 8
    lr: float = 0.001
    lam: float = 1.0
    seed: int = 0
    use_c: bool = True
    use_r: bool = True
    records_per_cloud: int | None = None


@dataclass
class EpochStats:
    epoch: int
    loss_c: float
    loss_r: float
    combined: float


@dataclass
class PretrainOutput:
    curve: list[EpochStats] = field(default_factory=list)
    steps: int = 0


def pretrain(model: SslModel, episode: Episode, clouds: list[PretextCloud],
             config: PretrainConfig) -> PretrainOutput:
    """Train the model on the support set's pretext records.

    Clouds are shuffled each epoch and processed in groups of
    ``batch_clouds``; each group takes one Adam step on the group-mean losses.
    Any cloud outside the episode's support set is rejected.  Fixed seeds give
    bit-identical loss curves.
    """
    assert_support_only(episode, [c.cloud_id for c in clouds])
    masked: list[PretextCloud] = []
    for c in sorted(clouds, key=lambda c: c.cloud_id):
        recs = [
            r for r in c.records
            if (r.task == "C" and config.use_c) or (r.task == "R" and config.use_r)
        ]
        masked.append(PretextCloud(c.cloud_id, c.points, c.tree, recs))
    total = sum(len(c.records) for c in masked)
    if total == 0:
        raise ValueError("no pretext records to train on (check the task mask)")

    shuffle_rng, dropout_rng, sample_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(3)
    )
    adam = Adam(lr=config.lr)
    params = model.params()
    out = PretrainOutput()
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(masked))
        sums = {"C": 0.0, "R": 0.0}
        counts = {"C": 0, "R": 0}
        for start in range(0, len(order), config.batch_clouds):
            group = [masked[i] for i in order[start : start + config.batch_clouds]]
            batch = []
            for c in group:
                recs = c.records
                cap = config.records_per_cloud
                if cap is not None and len(recs) > cap:
                    picked = sample_rng.choice(len(recs), size=cap, replace=False)
                    recs = [recs[i] for i in np.sort(picked)]
                batch.append((c.points, c.tree, recs))
            p = _PretextPass(model, batch, mode="train", rng=dropout_rng)
            grads = p.backward(weight_c=1.0, weight_r=config.lam)
            adam.update(params, grads)
            out.steps += 1
            for task in ("C", "R"):
                t = p.task.get(task)
                if t:
                    sums[task] += t["loss_sum"]
                    counts[task] += t["count"]
        loss_c = sums["C"] / counts["C"] if counts["C"] else 0.0
        loss_r = sums["R"] / counts["R"] if counts["R"] else 0.0
        out.curve.append(EpochStats(epoch, loss_c, loss_r, loss_c + config.lam * loss_r))
    return out


def write_loss_curve(path, curve: list[EpochStats]) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,loss_C,loss_R,combined\n")
        for row in curve:
            fh.write(f"{row.epoch},{row.loss_c!r},{row.loss_r!r},{row.combined!r}\n")


def export_embeddings(model: SslModel, clouds: dict[str, object], path) -> None:
    """Eval-mode embeddings for each cloud, dumped to one binary container."""
    arrays = {cid: embed_points(model, cloud) for cid, cloud in clouds.items()}
    save_arrays(path, arrays, meta={"kind": "embeddings", "width": model.extractor_widths[-1]})


def load_embeddings(path) -> dict[str, np.ndarray]:
    arrays, _ = load_arrays(path)
    return arrays


def save_model(path, model: SslModel, step: int = 0) -> None:
    arrays = dict(model.params())
    arrays.update({"state." + k: v for k, v in model.state().items()})
    meta = model.config_meta()
    meta.update({"kind": "ssl-model", "step": step})
    save_arrays(path, arrays, meta)


def load_model(path) -> tuple[SslModel, int]:
    arrays, meta = load_arrays(path)
    if meta.get("kind") != "ssl-model":
        raise ValueError(f"{path} is not a model checkpoint")
    model = SslModel(
        d=meta["d"],
        extractor_widths=tuple(meta["extractor_widths"]),
        branch_widths=tuple(meta["branch_widths"]),
        head_hidden=meta["head_hidden"],
        slope=meta["slope"],
        dropout_keep=meta["dropout_keep"],
        lam=meta["lam"],
        seed=meta["seed"],
        bn_bypass_below=meta["bn_bypass_below"],
    )
    for key, arr in model.params().items():
        if arrays[key].shape != arr.shape:
            raise ValueError(f"checkpoint shape mismatch for {key}")
        arr[...] = arrays[key]
    for key, arr in model.state().items():
        arr[...] = arrays["state." + key]
    return model, int(meta["step"])
