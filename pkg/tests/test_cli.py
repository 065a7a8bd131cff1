import json

import pytest

from aspectgcn.cli import main

from conftest import FIXTURES

RESTAURANT_MINI = FIXTURES + "/restaurant_mini.xml"
TWITTER_MINI = FIXTURES + "/twitter_mini.txt"


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(
        f"""
dataset: custom
train_path: {RESTAURANT_MINI}
test_path: {RESTAURANT_MINI}
data_format: semeval
embed_dim: 16
encoder: stub
encoder_layers: [1, 3]
stub_hidden_size: 16
stub_heads: 2
stub_layers: 4
finetune_encoder: false
parser: chain
window: 2
hidden_dim: 8
dropout: 0.0
lambda_l2: 0.0
batch_size: 4
epochs: 1
folds: 2
seed: 3
cache_dir: {tmp_path / 'cache'}
out_dir: {tmp_path / 'runs'}
"""
    )
    return path


def test_stats_semeval(capsys):
    assert main(["stats", "--path", RESTAURANT_MINI, "--format", "semeval"]) == 0
    out = capsys.readouterr().out
    assert "positive\t2" in out
    assert "neutral\t2" in out
    assert "negative\t2" in out
    assert "total\t6" in out


def test_stats_twitter_format_inferred(capsys):
    assert main(["stats", "--path", TWITTER_MINI]) == 0
    assert "total\t6" in capsys.readouterr().out


def test_prepare_writes_parse_cache(config_file, tmp_path, capsys):
    assert main(["prepare", "--config", str(config_file)]) == 0
    assert "cached parses" in capsys.readouterr().out
    assert (tmp_path / "cache" / "parses.tsv").exists()


def test_train_eval_roundtrip(config_file, tmp_path, capsys):
    assert main(["train", "--config", str(config_file), "--fold", "0"]) == 0
    out = capsys.readouterr().out
    assert "best val accuracy" in out
    run_dirs = list((tmp_path / "runs").glob("run-*/checkpoints/fold-0.pt"))
    assert len(run_dirs) == 1
    assert main([
        "eval", "--checkpoint", str(run_dirs[0]), "--data", RESTAURANT_MINI,
    ]) == 0
    out = capsys.readouterr().out
    assert out.startswith("accuracy\t")
    assert "macro_f1\t" in out


def test_cv_emits_metrics(config_file, tmp_path, capsys):
    assert main(["cv", "--config", str(config_file)]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0].startswith("fold\t")
    jsonl = list((tmp_path / "runs").glob("run-*/metrics.jsonl"))
    assert jsonl
    records = [json.loads(line) for line in jsonl[0].read_text().splitlines()]
    assert records[-1]["record"] == "aggregate"


def test_cv_ablation_matrix(config_file, tmp_path, capsys):
    assert main(["cv", "--config", str(config_file), "--ablation-matrix"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "variant\taccuracy\tmacro_f1"
    assert len(out) == 5
    assert any(line.startswith("no_position_no_attention_graph\t") for line in out)
    assert list((tmp_path / "runs").glob("ablation-*/ablation.tsv"))


def test_sweep_window_and_plot(config_file, tmp_path, capsys):
    assert main([
        "sweep-window", "--config", str(config_file), "--windows", "1,2",
    ]) == 0
    csv_files = list((tmp_path / "runs").glob("sweep-*/window_sweep.csv"))
    svg_files = list((tmp_path / "runs").glob("sweep-*/window_sweep.svg"))
    assert csv_files and svg_files
    capsys.readouterr()
    out_svg = tmp_path / "replot.svg"
    assert main([
        "plot", "--csv", str(csv_files[0]), "--out", str(out_svg),
        "--x", "window", "--y", "accuracy,macro_f1",
    ]) == 0
    assert out_svg.read_text().startswith("<svg")


def test_graph_diff_tsv(config_file, capsys):
    assert main([
        "graph-diff", "--config", str(config_file), "--index", "0",
    ]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "layer\ti\ttoken_i\tj\ttoken_j\tedit"
    for line in lines[1:]:
        cells = line.split("\t")
        assert len(cells) == 6
        assert cells[5] in ("added", "pruned")


def test_config_error_is_reported(config_file, capsys):
    code = main(["cv", "--config", str(config_file), "--set", "alpha=0.0"])
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_set_flag_overrides(config_file, tmp_path, capsys):
    assert main([
        "train", "--config", str(config_file), "--fold", "1",
        "--set", "epochs=0", "--set", "window=1",
    ]) == 0
    assert "best val accuracy" in capsys.readouterr().out
