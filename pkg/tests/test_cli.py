import json

import numpy as np
import pytest

from pointcover.cli import main
from pointcover.covertree import load_tree
from pointcover.geometry import load_cloud, normalize_unit_cube
from pointcover.pretext import read_pretext_jsonl
from pointcover.sslnet import load_embeddings


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    outdir = tmp_path_factory.mktemp("data")
    code = main([
        "synthesize", "--classes", "3", "--per-class", "8", "--points", "48",
        "--noise", "0.01", "--seed", "1", "--out", str(outdir),
    ])
    assert code == 0
    return outdir


def fast_flags(reps="2"):
    return [
        "--way", "2", "--shot", "2", "--q-per-class", "2", "--repetitions", reps,
        "--epochs", "2", "--batch-clouds", "2", "--records-per-cloud", "24",
        "--probe-epochs", "40", "--seed", "0",
    ]


class TestSynthesize:
    def test_creates_files_and_manifest(self, dataset):
        assert (dataset / "manifest.json").exists()
        assert len(list(dataset.glob("*.xyz"))) == 24

    def test_too_many_classes_is_config_error(self, tmp_path):
        code = main(["synthesize", "--classes", "9", "--out", str(tmp_path)])
        assert code == 1


class TestTreeAndLabels:
    def test_build_tree(self, dataset, tmp_path):
        cloud_file = next(dataset.glob("*.xyz"))
        out = tmp_path / "tree.json"
        code = main(["build-tree", "--cloud", str(cloud_file), "--out", str(out)])
        assert code == 0
        cloud = normalize_unit_cube(load_cloud(cloud_file))
        tree = load_tree(out, cloud)
        assert tree.epsilon == 2.0

    def test_gen_labels(self, dataset, tmp_path):
        cloud_file = next(dataset.glob("*.xyz"))
        out = tmp_path / "labels.jsonl"
        code = main(["gen-labels", "--cloud", str(cloud_file), "--out", str(out)])
        assert code == 0
        datasets = read_pretext_jsonl(out)
        assert len(datasets) == 1 and len(datasets[0]) > 0

    def test_missing_cloud_is_data_error(self, tmp_path):
        code = main(["build-tree", "--cloud", str(tmp_path / "nope.xyz"),
                     "--out", str(tmp_path / "t.json")])
        assert code == 2

    def test_bad_epsilon_is_config_error(self, dataset, tmp_path):
        cloud_file = next(dataset.glob("*.xyz"))
        code = main(["build-tree", "--cloud", str(cloud_file), "--epsilon", "0.9",
                     "--out", str(tmp_path / "t.json")])
        assert code == 1


class TestBadUsage:
    def test_unknown_flag(self):
        assert main(["synthesize", "--bogus", "1"]) == 1

    def test_unknown_command(self):
        assert main(["frobnicate"]) == 1


class TestPipeline:
    def test_end_to_end_and_replay(self, dataset, tmp_path):
        manifest = dataset / "manifest.json"
        out1 = tmp_path / "run1"
        code = main(["pipeline", "--manifest", str(manifest), "--out", str(out1)]
                    + fast_flags())
        assert code == 0
        results = (out1 / "results.csv").read_text()
        lines = results.splitlines()
        assert lines[0] == "episode_seed,way,shot,method,accuracy"
        assert len(lines) == 1 + 2 * 2  # two methods x two repetitions
        assert (out1 / "summary.csv").exists()
        record = json.loads((out1 / "run_record.json").read_text())
        assert record["command"] == "pipeline"

        out2 = tmp_path / "run2"
        code = main(["pipeline", "--manifest", str(manifest), "--out", str(out2),
                     "--from-record", str(out1 / "run_record.json")])
        assert code == 0
        assert (out2 / "results.csv").read_bytes() == (out1 / "results.csv").read_bytes()
        assert (out2 / "summary.csv").read_bytes() == (out1 / "summary.csv").read_bytes()

    def test_impossible_episode_is_config_error(self, dataset, tmp_path):
        code = main(["pipeline", "--manifest", str(dataset / "manifest.json"),
                     "--out", str(tmp_path / "x"), "--way", "5", "--shot", "10"])
        assert code == 1


class TestSweep:
    def test_small_grid(self, dataset, tmp_path):
        out = tmp_path / "sweep"
        code = main(["sweep-epsilon", "--manifest", str(dataset / "manifest.json"),
                     "--out", str(out), "--grid", "1.5,2.0"] + fast_flags(reps="1"))
        assert code == 0
        lines = (out / "sweep.csv").read_text().splitlines()
        assert lines[0] == "epsilon,accuracy,silhouette"
        assert len(lines) == 3
        values = [line.split(",") for line in lines[1:]]
        assert all(np.isfinite(float(v)) for row in values for v in row)

    def test_bad_grid_value(self, dataset, tmp_path):
        code = main(["sweep-epsilon", "--manifest", str(dataset / "manifest.json"),
                     "--out", str(tmp_path / "s"), "--grid", "0.5"] + fast_flags())
        assert code == 1


class TestEmbedProbeHeatmap:
    def test_pretrain_embed_probe_heatmap(self, dataset, tmp_path):
        manifest = dataset / "manifest.json"
        pre_out = tmp_path / "pre"
        code = main(["pretrain", "--manifest", str(manifest), "--out", str(pre_out)]
                    + fast_flags(reps="1"))
        assert code == 0
        checkpoint = pre_out / "model.npz"
        assert checkpoint.exists()
        curve = (pre_out / "loss_curve.csv").read_text().splitlines()
        assert curve[0] == "epoch,loss_C,loss_R,combined"

        emb_out = tmp_path / "emb.npz"
        code = main(["embed", "--checkpoint", str(checkpoint),
                     "--manifest", str(manifest), "--out", str(emb_out)])
        assert code == 0
        embeddings = load_embeddings(emb_out)
        assert len(embeddings) == 24
        assert all(arr.shape[1] == 128 for arr in embeddings.values())

        code = main(["probe", "--support-embeddings", str(emb_out),
                     "--query-embeddings", str(emb_out), "--manifest", str(manifest)])
        assert code == 0

        heat_out = tmp_path / "heat.csv"
        cloud_file = next(dataset.glob("*.xyz"))
        code = main(["heatmap", "--cloud", str(cloud_file), "--checkpoint", str(checkpoint),
                     "--anchor", "3", "--out", str(heat_out)])
        assert code == 0
        lines = heat_out.read_text().splitlines()
        assert lines[0] == "x,y,z,distance"
        assert len(lines) == 49

    def test_embed_requires_input(self, tmp_path):
        assert main(["embed", "--out", str(tmp_path / "e.npz")]) == 1


class TestEnvOverride:
    def test_outdir_from_environment(self, tmp_path, monkeypatch):
        target = tmp_path / "env_out"
        monkeypatch.setenv("POINTCOVER_OUTDIR", str(target))
        code = main(["synthesize", "--classes", "1", "--per-class", "1", "--points", "16"])
        assert code == 0
        assert (target / "manifest.json").exists()
