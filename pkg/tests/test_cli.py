"""End-to-end CLI flows over real files in a temp directory."""

import json
import sys

import pytest

from robustslu.cli import main
from robustslu.pipeline import EvalReport


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """synth -> train baseline -> paraphrase(rules) -> augment -> advset flow."""
    root = tmp_path_factory.mktemp("cliflow")
    assert main(["synth", "--out", str(root / "data"), "--n-train", "200",
                 "--n-dev", "40", "--n-test", "60", "--seed", "3"]) == 0
    assert main(["train", "--train", str(root / "data" / "train.tsv"),
                 "--dev", str(root / "data" / "dev.tsv"),
                 "--out", str(root / "baseline"),
                 "--hidden", "24", "--layers", "1", "--emb", "16", "--epochs", "15",
                 "--dropout", "0.1", "--weight-decay", "0", "--batch", "16",
                 "--seed", "2"]) == 0
    assert main(["paraphrase", "--data", str(root / "data" / "train.tsv"),
                 "--source", "rules", "--k", "3", "--seed", "0",
                 "--out", str(root / "cache-rules.jsonl")]) == 0
    assert main(["augment", "--model", str(root / "baseline" / "model.npz"),
                 "--data", str(root / "data" / "train.tsv"),
                 "--cache", str(root / "cache-rules.jsonl"),
                 "--out", str(root / "aug.jsonl")]) == 0
    return root


def test_synth_artifacts(workdir):
    data = workdir / "data"
    for name in ("train.tsv", "dev.tsv", "test.tsv", "perturbed.tsv",
                 "grammar.json", "labelspace.json", "config.json"):
        assert (data / name).exists()
    assert len((data / "train.tsv").read_text().splitlines()) == 200


def test_train_artifacts_and_frozen_config(workdir):
    out = workdir / "baseline"
    assert (out / "model.npz").exists()
    assert (out / "history.jsonl").exists()
    config = json.loads((out / "config.json").read_text())
    assert config["seed"] == 2
    assert config["tagger_config"]["hidden_size"] == 24
    history = [json.loads(l) for l in (out / "history.jsonl").read_text().splitlines()]
    assert len(history) == 15
    assert history[-1]["dev_exact_match"] is not None


def test_train_refuses_overwrite_without_resume(workdir, capsys):
    code, _, err = run(capsys, "train", "--train", str(workdir / "data" / "train.tsv"),
                       "--out", str(workdir / "baseline"))
    assert code == 1 and "--resume" in err
    code, out, _ = run(capsys, "train", "--train", str(workdir / "data" / "train.tsv"),
                       "--out", str(workdir / "baseline"), "--resume")
    assert code == 0 and "nothing to do" in out


def test_paraphrase_cache_and_resume(workdir, capsys):
    cache = workdir / "cache-rules.jsonl"
    n_before = len(cache.read_text().splitlines())
    assert n_before == 200
    code, _, err = run(capsys, "paraphrase", "--data", str(workdir / "data" / "train.tsv"),
                       "--source", "rules", "--out", str(cache))
    assert code == 1 and "--resume" in err
    code, out, _ = run(capsys, "paraphrase", "--data", str(workdir / "data" / "train.tsv"),
                       "--source", "rules", "--out", str(cache), "--resume")
    assert code == 0
    assert json.loads(out)["new_sets"] == 0  # everything already cached
    assert len(cache.read_text().splitlines()) == n_before


def test_augment_output_links_originals(workdir):
    lines = (workdir / "aug.jsonl").read_text().splitlines()
    assert lines
    rec = json.loads(lines[0])
    assert rec["origin"] == "augmented" and rec["weight"] == 0.1
    # ids derive from the dataset file stem, so links match the train command's ids
    assert rec["original_id"].startswith("train-")


def test_augmented_training_with_alp(workdir, capsys):
    code, out, err = run(capsys, "train",
                         "--train", str(workdir / "data" / "train.tsv"),
                         "--dev", str(workdir / "data" / "dev.tsv"),
                         "--out", str(workdir / "alp"),
                         "--augment", str(workdir / "aug.jsonl"),
                         "--pairing", "alp", "--lambda-a", "0.05",
                         "--hidden", "24", "--layers", "1", "--emb", "16",
                         "--epochs", "3", "--dropout", "0.1", "--weight-decay", "0",
                         "--batch", "16", "--seed", "2")
    assert code == 0, err
    final = json.loads(out)["final"]
    assert final["adv_pair_loss"] > 0.0
    assert final["augmented_loss"] > 0.0


def test_alp_without_paraphrases_is_usage_error(workdir, capsys):
    code, _, err = run(capsys, "train", "--train", str(workdir / "data" / "train.tsv"),
                       "--out", str(workdir / "bad"), "--pairing", "alp")
    assert code == 1 and "paraphrase" in err


def test_eval_report_and_determinism(workdir, capsys):
    args = ("eval", "--model", f"baseline={workdir / 'baseline' / 'model.npz'}",
            "--clean", str(workdir / "data" / "test.tsv"),
            "--adv", f"perturbed={workdir / 'data' / 'perturbed.tsv'}",
            "--out", str(workdir / "report"))
    code, out1, _ = run(capsys, *args)
    assert code == 0
    assert (workdir / "report" / "report.jsonl").exists()
    report = EvalReport.from_jsonl((workdir / "report" / "report.jsonl").read_text())
    assert report.rows[0].model == "baseline"
    first = (workdir / "report" / "report.jsonl").read_text()
    code, out2, _ = run(capsys, *args)
    assert code == 0
    assert (workdir / "report" / "report.jsonl").read_text() == first  # bit-identical
    assert out1 == out2


def test_report_rendering_from_file(workdir, capsys):
    code, out, _ = run(capsys, "report", "--report",
                       str(workdir / "report" / "report.jsonl"))
    assert code == 0 and "adv-avg" in out


def test_advset_build_and_export(workdir, capsys, tmp_path):
    flip_adapter = (
        "import json,sys\n"
        "for line in sys.stdin:\n"
        "    req=json.loads(line)\n"
        "    t=req['text'].split()\n"
        "    beams=[' '.join(['maybe']+t), ' '.join(t+['i','guess'])]\n"
        "    print(json.dumps({'id':req['id'],'beams':beams[:req['k']]}))\n"
    )
    script = tmp_path / "adapter.py"
    script.write_text(flip_adapter)
    code, out, err = run(capsys, "paraphrase", "--data", str(workdir / "data" / "test.tsv"),
                         "--source", "adapter", "--adapter-cmd",
                         f"{sys.executable} {script}", "--adapter-name", "bt-x",
                         "--k", "2", "--out", str(workdir / "cache-adapter.jsonl"))
    assert code == 0, err
    code, out, err = run(capsys, "advset", "build",
                         "--model", str(workdir / "baseline" / "model.npz"),
                         "--data", str(workdir / "data" / "test.tsv"),
                         "--cache", str(workdir / "cache-adapter.jsonl"),
                         "--store", str(workdir / "store.log"))
    assert code == 0, err
    built = json.loads(out)
    assert built["progress"]["by_status"]["pending"] == built["new_candidates"]
    code, out, err = run(capsys, "advset", "export", "--store", str(workdir / "store.log"),
                         "--out", str(workdir / "adv.tsv"))
    assert code == 0
    assert json.loads(out)["exported"] == 0  # nothing annotated yet


def test_seed_demo_writes_store(tmp_path, capsys):
    code, out, _ = run(capsys, "annotate", "seed-demo", "--out", str(tmp_path / "demo"))
    assert code == 0
    info = json.loads(out)
    assert info["candidates"] == 5
    assert (tmp_path / "demo" / "store.log").exists()
    assert (tmp_path / "demo" / "tokens.json").exists()


def test_train_from_experiment_config(workdir, capsys, tmp_path):
    config = {
        "train": str(workdir / "data" / "train.tsv"),
        "dev": str(workdir / "data" / "dev.tsv"),
        "output_dir": str(tmp_path / "cfg-run"),
        "tagger": {"hidden_size": 16, "num_layers": 1, "dropout": 0.1,
                   "learning_rate": 0.01, "weight_decay": 0.0, "epochs": 2,
                   "embedding_dim": 12, "batch_size": 16, "seed": 4,
                   "optimizer": "adamw", "clip_norm": 5.0, "min_count": 1},
        "seed": 4,
    }
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(config))
    code, out, err = run(capsys, "train", "--config", str(path))
    assert code == 0, err
    assert (tmp_path / "cfg-run" / "model.npz").exists()


def test_experiment_config_validates_paths(tmp_path, capsys):
    path = tmp_path / "exp.json"
    path.write_text(json.dumps({"train": str(tmp_path / "missing.tsv"),
                                "output_dir": str(tmp_path / "run")}))
    code, _, err = run(capsys, "train", "--config", str(path))
    assert code == 2 and "does not exist" in err


def test_adapter_env_var_override(workdir, capsys, tmp_path, monkeypatch):
    script = tmp_path / "echo_adapter.py"
    script.write_text(
        "import json,sys\n"
        "for line in sys.stdin:\n"
        "    req=json.loads(line)\n"
        "    print(json.dumps({'id':req['id'],'beams':[req['text']+' indeed']}))\n")
    monkeypatch.setenv("ROBUSTSLU_ADAPTER_CMD", f"{sys.executable} {script}")
    code, out, err = run(capsys, "paraphrase", "--data", str(workdir / "data" / "dev.tsv"),
                         "--source", "adapter", "--k", "1",
                         "--out", str(tmp_path / "cache.jsonl"))
    assert code == 0, err
    assert json.loads(out)["failures"] == 0


def test_usage_error_exit_code(capsys):
    assert run(capsys, "train")[0] == 1          # missing required flags
    assert run(capsys, "nonsense")[0] == 1       # unknown subcommand


def test_data_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.tsv"
    bad.write_text("just text without tabs\n")
    code, _, err = run(capsys, "train", "--train", str(bad), "--out", str(tmp_path / "m"))
    assert code == 2 and "data error" in err


def test_ingest_roundtrip(tmp_path, capsys):
    src = tmp_path / "src.tsv"
    src.write_text("what's the weather in sydney today\tweather/find\tlocation:4-4,datetime:5-5\n"
                   "cancel my alarm\talarm/cancel\t\n")
    code, out, _ = run(capsys, "ingest", "--train", str(src), "--out", str(tmp_path / "norm"))
    assert code == 0
    info = json.loads(out)
    assert info["counts"]["train"] == 2
    assert info["intents"] == 2 and info["slot_labels"] == 2
    assert (tmp_path / "norm" / "train.tsv").exists()
    assert (tmp_path / "norm" / "labelspace.json").exists()
