"""Command-line interface.

Exit codes: 0 on success, 1 on configuration errors, 2 on data errors.  The
``POINTCOVER_OUTDIR`` environment variable overrides the default output
directory of every command that writes artifacts.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click

from . import __version__
from .covertree import build_cover_tree, save_tree, validate_invariants
from .errors import DataError
from .geometry import load_cloud, load_entry, normalize_unit_cube, read_manifest
from .pipeline import (
    RunConfig,
    config_from_record,
    pretrain_once,
    run_pipeline,
    sweep_epsilon,
)
from .pretext import build_pretext_dataset, write_pretext_jsonl
from .probe import CloudEmbedding, KnnClassifier, evaluate, feature_heatmap, pool_cloud, train_linear_probe, write_heatmap_csv
from .sslnet import SslModel, embed_points, export_embeddings, load_embeddings, load_model
from .synth import SHAPES, synthesize_dataset

_DEFAULTS = RunConfig()


def out_option(default_name: str):
    return click.option(
        "--out",
        type=click.Path(path_type=Path),
        default=Path(default_name),
        show_default=True,
        envvar="POINTCOVER_OUTDIR",
        help="Output location (env POINTCOVER_OUTDIR overrides).",
    )


def config_options(fn):
    opts = [
        click.option("--epsilon", type=float, default=_DEFAULTS.epsilon, show_default=True,
                     help="Base of the per-level ball radius epsilon**i."),
        click.option("--max-depth", type=int, default=_DEFAULTS.max_depth, show_default=True,
                     help="Covering levels materialized below the root."),
        click.option("--way", type=int, default=_DEFAULTS.way, show_default=True),
        click.option("--shot", type=int, default=_DEFAULTS.shot, show_default=True),
        click.option("--q-per-class", type=int, default=_DEFAULTS.q_per_class, show_default=True),
        click.option("--repetitions", type=int, default=_DEFAULTS.repetitions, show_default=True,
                     help="Episode repetitions; seeds run seed..seed+reps-1."),
        click.option("--epochs", type=int, default=_DEFAULTS.epochs, show_default=True),
        click.option("--batch-clouds", type=int, default=_DEFAULTS.batch_clouds, show_default=True),
        click.option("--lr", type=float, default=_DEFAULTS.lr, show_default=True),
        click.option("--lam", type=float, default=_DEFAULTS.lam, show_default=True,
                     help="Weight of the regression loss in the combined loss."),
        click.option("--seed", type=int, default=_DEFAULTS.seed, show_default=True),
        click.option("--ablation", type=click.Choice(["C", "R", "C+R", "none"]),
                     default=_DEFAULTS.ablation, show_default=True),
        click.option("--subsample-points", type=int, default=None,
                     help="Randomly keep this many points per cloud before indexing."),
        click.option("--records-per-cloud", type=int, default=None,
                     help="Cap on pretext records sampled per cloud per epoch."),
        click.option("--pool", type=click.Choice(["mean", "meanmax"]),
                     default=_DEFAULTS.pool, show_default=True),
        click.option("--probe-epochs", type=int, default=_DEFAULTS.probe_epochs, show_default=True),
        click.option("--probe-lr", type=float, default=_DEFAULTS.probe_lr, show_default=True),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def make_config(**kwargs) -> RunConfig:
    return RunConfig(**kwargs)


@click.group()
@click.version_option(version=__version__)
def cli():
    """Ball-cover indexing, self-supervised pretraining, and few-shot evaluation."""


@cli.command()
@click.option("--classes", type=int, default=6, show_default=True,
              help=f"Number of shape classes (at most {len(SHAPES)}).")
@click.option("--per-class", type=int, default=40, show_default=True)
@click.option("--points", type=int, default=256, show_default=True)
@click.option("--noise", type=float, default=0.01, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@out_option("synthetic")
def synthesize(classes, per_class, points, noise, seed, out):
    """Generate a labeled synthetic shape dataset (xyz files + manifest)."""
    manifest = synthesize_dataset(out, classes, per_class, points, noise, seed)
    click.echo(f"wrote {classes * per_class} clouds; manifest: {manifest}")


@cli.command("build-tree")
@click.option("--cloud", "cloud_path", type=click.Path(path_type=Path), required=True)
@click.option("--epsilon", type=float, default=_DEFAULTS.epsilon, show_default=True)
@click.option("--max-depth", type=int, default=_DEFAULTS.max_depth, show_default=True)
@out_option("tree.json")
def build_tree_cmd(cloud_path, epsilon, max_depth, out):
    """Normalize a cloud, build its ball-cover tree, and validate it."""
    cloud = normalize_unit_cube(load_cloud(cloud_path))
    tree = build_cover_tree(cloud, epsilon, max_depth)
    report = validate_invariants(tree, cloud)
    save_tree(out, tree)
    click.echo(
        f"tree: top_level={tree.top_level} nodes={len(tree.nodes)} "
        f"levels={tree.covering_levels} validation={report.summary()}"
    )
    if not report.ok:
        raise DataError(f"tree invariants violated: {report.summary()}")


@cli.command("gen-labels")
@click.option("--cloud", "cloud_path", type=click.Path(path_type=Path), required=True)
@click.option("--epsilon", type=float, default=_DEFAULTS.epsilon, show_default=True)
@click.option("--max-depth", type=int, default=_DEFAULTS.max_depth, show_default=True)
@out_option("labels.jsonl")
def gen_labels(cloud_path, epsilon, max_depth, out):
    """Generate both pretext label sets for one cloud as JSON lines."""
    cloud = normalize_unit_cube(load_cloud(cloud_path))
    tree = build_cover_tree(cloud, epsilon, max_depth)
    dataset = build_pretext_dataset(tree)
    write_pretext_jsonl(out, dataset)
    click.echo(
        f"wrote {len(dataset.regression_pairs)} regression and "
        f"{len(dataset.quadrant_pairs)} quadrant pairs to {out}"
    )


@cli.command("pretrain")
@click.option("--manifest", type=click.Path(path_type=Path), required=True)
@config_options
@out_option("pretrain_out")
def pretrain_cmd(manifest, out, **kwargs):
    """Pretrain on one episode's support set; saves checkpoint and loss curve."""
    config = make_config(**kwargs)
    checkpoint = pretrain_once(config, manifest, out)
    click.echo(f"checkpoint: {checkpoint}")


@cli.command()
@click.option("--checkpoint", type=click.Path(path_type=Path), default=None,
              help="Model checkpoint; omit for an untrained seed-0 model.")
@click.option("--manifest", type=click.Path(path_type=Path), default=None)
@click.option("--cloud", "cloud_paths", type=click.Path(path_type=Path), multiple=True)
@out_option("embeddings.npz")
def embed(checkpoint, manifest, cloud_paths, out):
    """Export eval-mode per-point embeddings for clouds or a whole manifest."""
    clouds = {}
    if manifest is not None:
        root = Path(manifest).parent
        for entry in read_manifest(manifest):
            clouds[entry.path] = normalize_unit_cube(load_entry(entry, root))
    for p in cloud_paths:
        cloud = normalize_unit_cube(load_cloud(p))
        clouds[cloud.cloud_id] = cloud
    if not clouds:
        raise ValueError("nothing to embed; pass --manifest and/or --cloud")
    if checkpoint is not None:
        model, _ = load_model(checkpoint)
    else:
        model = SslModel(d=next(iter(clouds.values())).d)
    export_embeddings(model, clouds, out)
    click.echo(f"embedded {len(clouds)} clouds -> {out}")


@cli.command("probe")
@click.option("--support-embeddings", type=click.Path(path_type=Path), required=True)
@click.option("--query-embeddings", type=click.Path(path_type=Path), required=True)
@click.option("--manifest", type=click.Path(path_type=Path), required=True,
              help="Supplies the class label for every embedded cloud id.")
@click.option("--pool", type=click.Choice(["mean", "meanmax"]), default="meanmax",
              show_default=True)
@click.option("--knn", type=int, default=None, help="Use k-NN instead of the linear probe.")
@click.option("--probe-epochs", type=int, default=_DEFAULTS.probe_epochs, show_default=True)
@click.option("--probe-lr", type=float, default=_DEFAULTS.probe_lr, show_default=True)
def probe_cmd(support_embeddings, query_embeddings, manifest, pool, knn, probe_epochs, probe_lr):
    """Train a probe on support embeddings and score it on query embeddings."""
    labels = {e.path: e.class_label for e in read_manifest(manifest)}

    def pooled(path):
        items = []
        for cid, emb in load_embeddings(path).items():
            if cid not in labels:
                raise DataError(f"cloud {cid!r} missing from manifest")
            items.append(CloudEmbedding(cid, pool_cloud(emb, pool), labels[cid]))
        return items

    support = pooled(support_embeddings)
    query = pooled(query_embeddings)
    if knn is not None:
        classifier = KnnClassifier.fit(support, k=knn)
    else:
        classifier = train_linear_probe(support, epochs=probe_epochs, lr=probe_lr)
    result = evaluate(classifier, query)
    click.echo(f"accuracy: {result.accuracy:.4f} over {len(query)} query clouds")


@cli.command("pipeline")
@click.option("--manifest", type=click.Path(path_type=Path), required=True)
@click.option("--from-record", type=click.Path(path_type=Path), default=None,
              help="Replay the configuration stored in a run record.")
@config_options
@out_option("pipeline_out")
def pipeline_cmd(manifest, from_record, out, **kwargs):
    """Episode loop: pretrain, probe, and compare against random init."""
    if from_record is not None:
        _, config, _ = config_from_record(from_record)
    else:
        config = make_config(**kwargs)
    result = run_pipeline(config, manifest, out)
    for method in result.methods():
        click.echo(
            f"{method}: {100 * result.mean_accuracy(method):.2f}"
            f" +/- {100 * result.std_accuracy(method):.2f} %"
        )
    click.echo(f"artifacts in {out}")


@cli.command("sweep-epsilon")
@click.option("--manifest", type=click.Path(path_type=Path), required=True)
@click.option("--grid", default="1.5,1.7,2.0,2.2,2.5", show_default=True,
              help="Comma-separated epsilon values.")
@config_options
@out_option("sweep_out")
def sweep_cmd(manifest, grid, out, **kwargs):
    """Run the pipeline once per epsilon and tabulate accuracy and silhouette."""
    config = make_config(**kwargs)
    values = [float(tok) for tok in grid.split(",") if tok.strip()]
    rows = sweep_epsilon(config, manifest, values, out)
    for row in rows:
        click.echo(f"epsilon={row.epsilon:g} accuracy={row.accuracy:.4f} "
                   f"silhouette={row.silhouette:.4f}")


@cli.command("heatmap")
@click.option("--cloud", "cloud_path", type=click.Path(path_type=Path), required=True)
@click.option("--checkpoint", type=click.Path(path_type=Path), default=None)
@click.option("--anchor", type=int, default=0, show_default=True,
              help="Index of the reference point.")
@out_option("heatmap.csv")
def heatmap_cmd(cloud_path, checkpoint, anchor, out):
    """Per-point feature-space distances from an anchor point, as CSV."""
    cloud = normalize_unit_cube(load_cloud(cloud_path))
    if checkpoint is not None:
        model, _ = load_model(checkpoint)
    else:
        model = SslModel(d=cloud.d)
    distances = feature_heatmap(embed_points(model, cloud), anchor)
    write_heatmap_csv(out, cloud, distances)
    click.echo(f"wrote {cloud.n} distances to {out}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        return 130
    except click.UsageError as exc:
        click.echo(f"config error: {exc.format_message()}", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except DataError as exc:
        click.echo(f"data error: {exc}", err=True)
        return 2
    except ValueError as exc:
        click.echo(f"config error: {exc}", err=True)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
