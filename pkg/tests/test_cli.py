import csv
import json
import os

import pytest

from scengen.cli import main

TINY_CONFIG = """\
synth_ndd:
  n_clusters: 6
  n_frames: 40
train_bv:
  beta: 0.5
  gamma: 0.9
  batch_size: 8
  hidden: [8, 8]
  warm_start: 16
  steps_per_epoch: 5
  epochs: 1
  eval_episodes: 0
  entropy_alpha: 0.1
train_av:
  batch_size: 8
  hidden: [8, 8]
  warm_start: 16
  steps_per_epoch: 5
  epochs: 1
  eval_episodes: 1
finetune:
  phases: 2
  phase_len: 3
  eval_episodes: 1
evaluate:
  episodes: 4
"""


@pytest.fixture(autouse=True)
def no_env_config(monkeypatch):
    monkeypatch.delenv("SCENGEN_CONFIG", raising=False)


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    """One full pipeline run: corpus -> store -> trained BV -> evaluations."""
    os.environ.pop("SCENGEN_CONFIG", None)
    root = tmp_path_factory.mktemp("pipeline")
    cfg = root / "tiny.yaml"
    cfg.write_text(TINY_CONFIG)
    paths = {
        "cfg": str(cfg),
        "corpus": str(root / "corpus"),
        "store": str(root / "store"),
        "bv": str(root / "bv"),
        "eval1": str(root / "eval1"),
        "eval2": str(root / "eval2"),
        "report": str(root / "report"),
    }

    assert main(["synth-ndd", "--config", paths["cfg"], "--out", paths["corpus"], "--seed", "0"]) == 0
    tracks = os.path.join(paths["corpus"], "tracks.csv")
    assert main(["ingest", "--config", paths["cfg"], "--out", paths["store"], "--input", tracks]) == 0
    store = os.path.join(paths["store"], "transitions.bin")
    assert main([
        "train-bv", "--config", paths["cfg"], "--out", paths["bv"],
        "--ndd", store, "--av", "uniform",
    ]) == 0
    policy = os.path.join(paths["bv"], "policy.bin")
    for out in (paths["eval1"], paths["eval2"]):
        assert main([
            "evaluate", "--config", paths["cfg"], "--out", out,
            "--bv", policy, "--av", "uniform", "--seeds", "0,1",
        ]) == 0
    assert main([
        "report", "--config", paths["cfg"], "--out", paths["report"],
        "--logs", paths["eval1"],
        "--checkpoint", os.path.join(paths["bv"], "checkpoint.bin"),
        "--ndd", store,
    ]) == 0
    paths["tracks"] = tracks
    paths["store_bin"] = store
    paths["policy"] = policy
    return paths


def test_synth_ndd_outputs(ws, tmp_path):
    assert os.path.exists(ws["tracks"])
    with open(os.path.join(ws["corpus"], "manifest.json")) as fh:
        manifest = json.load(fh)
    assert manifest["command"] == "synth-ndd"
    assert manifest["seeds"] == [0]
    # regenerating with the same seed reproduces the corpus byte for byte
    again = tmp_path / "again"
    assert main(["synth-ndd", "--config", ws["cfg"], "--out", str(again), "--seed", "0"]) == 0
    with open(ws["tracks"], "rb") as fh:
        first = fh.read()
    assert (again / "tracks.csv").read_bytes() == first


def test_ingest_outputs(ws):
    assert os.path.exists(ws["store_bin"])
    with open(os.path.join(ws["store"], "ingest_report.json")) as fh:
        report = json.load(fh)
    assert report["n_segments"] > 0
    assert report["n_rejected"] == 0
    assert report["n_transitions"] > 0


def test_ingest_dry_run(ws, tmp_path, capsys):
    out = tmp_path / "dry"
    code = main([
        "ingest", "--config", ws["cfg"], "--out", str(out),
        "--input", ws["tracks"], "--dry-run",
    ])
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["n_segments"] > 0
    assert not out.exists()  # nothing written


def test_train_bv_outputs(ws):
    for name in ("checkpoint.bin", "policy.bin", "train_log.csv", "manifest.json"):
        assert os.path.exists(os.path.join(ws["bv"], name)), name
    with open(os.path.join(ws["bv"], "train_log.csv"), newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) > 0
    assert all(r["phase"] == "bv" for r in rows)

    from scengen.nn import load_mlp

    net = load_mlp(os.path.join(ws["bv"], "policy.bin"))
    assert net.sizes == (8, 8, 8, 4)


def test_evaluate_outputs(ws):
    with open(os.path.join(ws["eval1"], "metrics.csv"), newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["seed"] for r in rows] == ["0", "1", "mean"]
    for r in rows:
        assert float(r["episodes"]) == 4.0  # the mean row renders as float
        assert float(r["cr"]) >= 0.0
    with open(os.path.join(ws["eval1"], "episodes.csv"), newline="") as fh:
        eps = list(csv.DictReader(fh))
    assert len(eps) == 8  # 2 seeds x 4 episodes
    assert {r["outcome"] for r in eps} <= {
        "av_collision", "bv_collision", "road_departure", "horizon"
    }
    logs = sorted(os.listdir(os.path.join(ws["eval1"], "scenarios")))
    assert len(logs) == 8
    assert logs[0] == "ep_0_0000.log"


def test_evaluate_is_reproducible(ws):
    for name in ("metrics.csv", "episodes.csv"):
        with open(os.path.join(ws["eval1"], name), "rb") as fh:
            a = fh.read()
        with open(os.path.join(ws["eval2"], name), "rb") as fh:
            b = fh.read()
        assert a == b, name
    log = os.path.join("scenarios", "ep_1_0003.log")
    with open(os.path.join(ws["eval1"], log), "rb") as fh:
        a = fh.read()
    with open(os.path.join(ws["eval2"], log), "rb") as fh:
        b = fh.read()
    assert a == b


def test_evaluate_no_scenarios(ws, tmp_path):
    out = tmp_path / "noscen"
    code = main([
        "evaluate", "--config", ws["cfg"], "--out", str(out),
        "--bv", "dr", "--av", "sumo", "--episodes", "2", "--no-scenarios",
    ])
    assert code == 0
    assert not (out / "scenarios").exists()
    assert (out / "metrics.csv").exists()


def test_report_outputs(ws):
    for name in (
        "collision_distance.csv",
        "following_gap.csv",
        "lateral_gap.csv",
        "pca.csv",
        "pca_explained.json",
    ):
        assert os.path.exists(os.path.join(ws["report"], name)), name
    with open(os.path.join(ws["report"], "collision_distance.csv"), newline="") as fh:
        rows = list(csv.DictReader(fh))
    total = sum(float(r["probability"]) for r in rows)
    assert total in (0.0, pytest.approx(1.0))
    with open(os.path.join(ws["report"], "pca.csv"), newline="") as fh:
        pca_rows = list(csv.DictReader(fh))
    assert {r["source"] for r in pca_rows} == {"sim", "real"}
    with open(os.path.join(ws["report"], "pca_explained.json")) as fh:
        explained = json.load(fh)["explained"]
    assert len(explained) == 2
    assert explained[0] >= explained[1] >= 0.0


def test_report_without_scenarios(ws, tmp_path, capsys):
    src = tmp_path / "noscen"
    main([
        "evaluate", "--config", ws["cfg"], "--out", str(src),
        "--bv", "dr", "--av", "uniform", "--episodes", "2", "--no-scenarios",
    ])
    capsys.readouterr()
    out = tmp_path / "rep"
    assert main(["report", "--config", ws["cfg"], "--out", str(out), "--logs", str(src)]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["scenarios"] == 0
    assert not (out / "following_gap.csv").exists()
    assert (out / "collision_distance.csv").exists()


def test_error_exit_codes(ws, tmp_path, capsys):
    out = str(tmp_path / "x")
    # unknown model names
    assert main(["evaluate", "--out", out, "--bv", "warp", "--av", "uniform",
                 "--episodes", "1"]) == 2
    assert "unknown BV model" in capsys.readouterr().err
    assert main(["evaluate", "--out", out, "--bv", "dr", "--av", "warp",
                 "--episodes", "1"]) == 2
    assert "unknown AV model" in capsys.readouterr().err
    # missing store
    assert main(["train-bv", "--config", ws["cfg"], "--out", out,
                 "--ndd", str(tmp_path / "none.bin")]) == 2
    assert "not found" in capsys.readouterr().err
    # ratio mixes recorded data but no store given
    assert main(["train-bv", "--config", ws["cfg"], "--out", out]) == 2
    assert "--ndd" in capsys.readouterr().err
    # bad seed list
    assert main(["evaluate", "--out", out, "--bv", "dr", "--av", "uniform",
                 "--episodes", "1", "--seeds", "0,x"]) == 2
    capsys.readouterr()
    # n-bvs disagrees with the checkpoint
    assert main(["evaluate", "--config", ws["cfg"], "--out", out,
                 "--bv", ws["policy"], "--av", "uniform",
                 "--episodes", "1", "--n-bvs", "3"]) == 2
    assert "trained with 1 BVs" in capsys.readouterr().err
    # report on a directory with no evaluation
    assert main(["report", "--out", out, "--logs", str(tmp_path)]) == 2
    assert "episodes.csv" in capsys.readouterr().err
    # missing subcommand is an argparse usage error
    with pytest.raises(SystemExit):
        main([])


def test_config_env_var(ws, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("SCENGEN_CONFIG", ws["cfg"])
    out = tmp_path / "envcfg"
    assert main(["synth-ndd", "--out", str(out), "--seed", "0"]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["rows"] > 0
    # tiny config (6 clusters x 40 frames) applied via the env var
    with open(ws["tracks"], "rb") as fh:
        assert (out / "tracks.csv").read_bytes() == fh.read()


def test_train_av_and_finetune(ws, tmp_path):
    av_out = tmp_path / "av"
    assert main([
        "train-av", "--config", ws["cfg"], "--out", str(av_out),
        "--bv", "fvdm",
    ]) == 0
    assert (av_out / "policy.bin").exists()
    with open(av_out / "train_log.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert all(r["phase"] == "av" for r in rows)

    ft_out = tmp_path / "ft"
    assert main([
        "finetune", "--config", ws["cfg"], "--out", str(ft_out),
        "--av-checkpoint", str(av_out / "policy.bin"),
        "--ndd", ws["store_bin"],
    ]) == 0
    for name in ("finetune_log.csv", "av_policy.bin", "bv_policy.bin"):
        assert (ft_out / name).exists(), name
    with open(ft_out / "finetune_log.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["phase"] for r in rows] == ["bv"] * 3 + ["av"] * 3
    assert all(r["av_avg_speed"] != "" for r in rows)
