"""End-to-end experiment orchestration.

One pipeline repetition samples an episode, normalizes its clouds, builds
ball-cover trees and pretext labels for the support set only, pretrains the
network, then scores a linear probe on pooled query embeddings -- once with
the pretrained extractor and once with an untrained copy as the random-init
control.  Repetitions use episode seeds ``seed .. seed + repetitions - 1`` and
results report mean and std over them.

Every command writes a ``run_record.json`` holding the full configuration;
re-running with the same record reproduces all CSV outputs byte for byte.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .covertree import build_cover_tree
from .episodes import Episode, sample_episode
from .geometry import ManifestEntry, PointCloud, load_entry, normalize_unit_cube, read_manifest, subsample
from .pretext import build_pretext_dataset
from .probe import CloudEmbedding, evaluate, pool_cloud, silhouette, train_linear_probe
from .sslnet import PretextCloud, PretrainConfig, SslModel, embed_points, pretrain, save_model, write_loss_curve

ABLATIONS = ("C", "R", "C+R", "none")


@dataclass
class RunConfig:
    epsilon: float = 2.0
    max_depth: int = 3
    way: int = 5
    shot: int = 10
    q_per_class: int = 20
    repetitions: int = 10
    epochs: int = 200
    batch_clouds: int = 8
    lr: float = 0.001
    lam: float = 1.0
    seed: int = 0
    ablation: str = "C+R"
    subsample_points: int | None = None
    records_per_cloud: int | None = None
    pool: str = "meanmax"
    probe_epochs: int = 300
    probe_lr: float = 0.05
    bn_bypass_below: int = 0

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if self.epsilon <= 1.0:
            raise ValueError(f"epsilon must be > 1, got {self.epsilon}")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")


def _derived_seed(*parts) -> int:
    mixed = []
    for p in parts:
        mixed.append(zlib.crc32(p.encode()) if isinstance(p, str) else int(p))
    return int(np.random.SeedSequence(mixed).generate_state(1)[0])


def _prepare_cloud(entry: ManifestEntry, root: Path, config: RunConfig, rep: int) -> PointCloud:
    cloud = load_entry(entry, root)
    if config.subsample_points is not None and config.subsample_points < cloud.n:
        cloud = subsample(
            cloud, config.subsample_points, _derived_seed(config.seed, rep, "sub", entry.path)
        )
    return normalize_unit_cube(cloud)


def _support_data(episode: Episode, clouds: dict[str, PointCloud], config: RunConfig) -> list[PretextCloud]:
    out = []
    for cid in sorted(episode.support_ids):
        cloud = clouds[cid]
        tree = build_cover_tree(cloud, config.epsilon, config.max_depth)
        out.append(
            PretextCloud(
                cloud_id=cid,
                points=cloud.points,
                tree=tree,
                records=build_pretext_dataset(tree).records(),
            )
        )
    return out


def _pooled(model: SslModel, clouds: dict[str, PointCloud], items, pool: str) -> list[CloudEmbedding]:
    return [
        CloudEmbedding(cloud_id=cid, vector=pool_cloud(embed_points(model, clouds[cid]), pool),
                       class_label=cls)
        for cid, cls in items
    ]


@dataclass
class MethodScore:
    method: str
    episode_seed: int
    accuracy: float
    silhouette: float


@dataclass
class PipelineResult:
    config: RunConfig
    scores: list[MethodScore] = field(default_factory=list)

    def methods(self) -> list[str]:
        seen = []
        for s in self.scores:
            if s.method not in seen:
                seen.append(s.method)
        return seen

    def accuracies(self, method: str) -> np.ndarray:
        return np.array([s.accuracy for s in self.scores if s.method == method])

    def silhouettes(self, method: str) -> np.ndarray:
        return np.array([s.silhouette for s in self.scores if s.method == method])

    def mean_accuracy(self, method: str) -> float:
        return float(self.accuracies(method).mean())

    def std_accuracy(self, method: str) -> float:
        return float(self.accuracies(method).std())


def run_repetition(config: RunConfig, entries: list[ManifestEntry], root: Path,
                   rep: int) -> list[MethodScore]:
    """One episode end to end; returns a score per evaluated method."""
    ep_seed = config.seed + rep
    episode = sample_episode(entries, config.way, config.shot, config.q_per_class, ep_seed)
    by_path = {e.path: e for e in entries}
    clouds = {
        cid: _prepare_cloud(by_path[cid], root, config, rep)
        for cid in sorted(episode.support_ids | episode.query_ids)
    }
    d = next(iter(clouds.values())).d
    init_seed = _derived_seed(config.seed, rep, "init")

    scores = []
    if config.ablation != "none":
        model = SslModel(d=d, lam=config.lam, seed=init_seed,
                         bn_bypass_below=config.bn_bypass_below)
        support_data = _support_data(episode, clouds, config)
        pretrain(
            model,
            episode,
            support_data,
            PretrainConfig(
                epochs=config.epochs,
                batch_clouds=config.batch_clouds,
                lr=config.lr,
                lam=config.lam,
                seed=_derived_seed(config.seed, rep, "train"),
                use_c="C" in config.ablation,
                use_r="R" in config.ablation,
                records_per_cloud=config.records_per_cloud,
            ),
        )
        scores.append(
            _score_method(f"pretrained:{config.ablation}", model, episode, clouds, config, ep_seed)
        )
    control = SslModel(d=d, lam=config.lam, seed=init_seed,
                       bn_bypass_below=config.bn_bypass_below)
    scores.append(_score_method("random-init", control, episode, clouds, config, ep_seed))
    return scores


def _score_method(name: str, model: SslModel, episode: Episode, clouds, config: RunConfig,
                  ep_seed: int) -> MethodScore:
    support = _pooled(model, clouds, episode.support, config.pool)
    query = _pooled(model, clouds, episode.query, config.pool)
    probe = train_linear_probe(support, epochs=config.probe_epochs, lr=config.probe_lr)
    result = evaluate(probe, query)
    X = np.stack([q.vector for q in query])
    y = np.array([q.class_label for q in query])
    return MethodScore(
        method=name,
        episode_seed=ep_seed,
        accuracy=result.accuracy,
        silhouette=silhouette(X, y),
    )


def run_pipeline(config: RunConfig, manifest_path, outdir) -> PipelineResult:
    """All repetitions plus CSV artifacts and the reproducibility record."""
    manifest_path = Path(manifest_path)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    entries = read_manifest(manifest_path)
    root = manifest_path.parent

    result = PipelineResult(config=config)
    for rep in range(config.repetitions):
        result.scores.extend(run_repetition(config, entries, root, rep))

    with (outdir / "results.csv").open("w") as fh:
        fh.write("episode_seed,way,shot,method,accuracy\n")
        for s in result.scores:
            fh.write(f"{s.episode_seed},{config.way},{config.shot},{s.method},{s.accuracy!r}\n")
    with (outdir / "summary.csv").open("w") as fh:
        fh.write("method,mean_accuracy,std_accuracy,repetitions\n")
        for method in result.methods():
            fh.write(
                f"{method},{result.mean_accuracy(method)!r},"
                f"{result.std_accuracy(method)!r},{config.repetitions}\n"
            )
    write_run_record(outdir, "pipeline", config, manifest=str(manifest_path))
    return result


@dataclass
class SweepRow:
    epsilon: float
    accuracy: float
    silhouette: float


def sweep_epsilon(config: RunConfig, manifest_path, grid, outdir) -> list[SweepRow]:
    """Full pipeline per epsilon; emits one (accuracy, silhouette) row each."""
    grid = [float(g) for g in grid]
    if any(g <= 1.0 for g in grid):
        raise ValueError(f"epsilon grid values must be > 1, got {grid}")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    rows = []
    for eps in grid:
        sub = replace(config, epsilon=eps)
        res = run_pipeline(sub, manifest_path, outdir / f"eps_{eps:g}")
        method = f"pretrained:{config.ablation}" if config.ablation != "none" else "random-init"
        rows.append(
            SweepRow(
                epsilon=eps,
                accuracy=res.mean_accuracy(method),
                silhouette=float(res.silhouettes(method).mean()),
            )
        )
    with (outdir / "sweep.csv").open("w") as fh:
        fh.write("epsilon,accuracy,silhouette\n")
        for row in rows:
            fh.write(f"{row.epsilon!r},{row.accuracy!r},{row.silhouette!r}\n")
    write_run_record(outdir, "sweep-epsilon", config, manifest=str(manifest_path),
                     extra={"grid": grid})
    return rows


def pretrain_once(config: RunConfig, manifest_path, outdir) -> Path:
    """Sample one episode, pretrain on its support set, save the checkpoint."""
    if config.ablation == "none":
        raise ValueError("pretraining with ablation='none' would train nothing")
    manifest_path = Path(manifest_path)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    entries = read_manifest(manifest_path)
    episode = sample_episode(entries, config.way, config.shot, config.q_per_class, config.seed)
    by_path = {e.path: e for e in entries}
    clouds = {
        cid: _prepare_cloud(by_path[cid], manifest_path.parent, config, 0)
        for cid in sorted(episode.support_ids)
    }
    d = next(iter(clouds.values())).d
    model = SslModel(d=d, lam=config.lam, seed=_derived_seed(config.seed, 0, "init"),
                     bn_bypass_below=config.bn_bypass_below)
    out = pretrain(
        model,
        episode,
        _support_data(episode, clouds, config),
        PretrainConfig(
            epochs=config.epochs,
            batch_clouds=config.batch_clouds,
            lr=config.lr,
            lam=config.lam,
            seed=_derived_seed(config.seed, 0, "train"),
            use_c="C" in config.ablation,
            use_r="R" in config.ablation,
            records_per_cloud=config.records_per_cloud,
        ),
    )
    checkpoint = outdir / "model.npz"
    save_model(checkpoint, model, step=out.steps)
    write_loss_curve(outdir / "loss_curve.csv", out.curve)
    from .episodes import save_episode

    save_episode(outdir / "episode.json", episode)
    write_run_record(outdir, "pretrain", config, manifest=str(manifest_path))
    return checkpoint


def write_run_record(outdir, command: str, config: RunConfig, manifest: str | None = None,
                     extra: dict | None = None) -> Path:
    record = {
        "command": command,
        "version": __version__,
        "config": asdict(config),
        "manifest": manifest,
    }
    if extra:
        record.update(extra)
    path = Path(outdir) / "run_record.json"
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return path


def config_from_record(path) -> tuple[str, RunConfig, dict]:
    """Load (command, config, full record) from a reproducibility record."""
    record = json.loads(Path(path).read_text())
    return record["command"], RunConfig(**record["config"]), record
