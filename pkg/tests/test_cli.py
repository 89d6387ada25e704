import io
import json

import pytest

from prodlm.cli import (
    EXIT_ARTIFACT, EXIT_CONFIG, EXIT_OK, EXIT_REPORT_INVARIANT, EXIT_USAGE,
    ConfigError, load_config, main,
)

CONFIG_TOML = """\
seed = 5
id_mode = true

[catalog]
n_products = 6
n_categories = 2

[model]
n_layers = 1
n_heads = 2
d_model = 32
d_ff = 48
context_len = 160

[train]
lr = 1e-3
batch_size = 8
epochs = 2

[paths]
workdir = "{workdir}"
"""


def _write_config(tmp_path, name="run.toml", **overrides):
    workdir = tmp_path / "run"
    text = CONFIG_TOML.format(workdir=workdir.as_posix())
    for old, new in overrides.items():
        assert old in text
        text = text.replace(old, new)
    path = tmp_path / name
    path.write_text(text)
    return path, workdir


def test_usage_errors():
    assert main([]) == EXIT_USAGE
    assert main(["frobnicate"]) == EXIT_USAGE
    assert main(["train"]) == EXIT_USAGE  # --config is required


def test_config_file_missing(tmp_path):
    assert main(["gen-catalog", "--config",
                 str(tmp_path / "nope.toml")]) == EXIT_CONFIG


def test_config_invalid_toml(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("seed = [unclosed")
    assert main(["gen-catalog", "--config", str(path)]) == EXIT_CONFIG


@pytest.mark.parametrize("mutate", [
    ("id_mode = true\n", ""),                        # id_mode is mandatory
    ("seed = 5", "seed = -3"),                       # seed must fit u64
    ("seed = 5", "seed = 5\nmystery = 1"),           # unknown key
    ("n_products = 6", "n_products = 1"),            # fewer than categories
    ("d_model = 32", "d_model = 33"),                # heads don't divide
    ("lr = 1e-3", "lr = -1.0"),                      # bad hyperparameter
    ("epochs = 2", "epochs = 0"),
    ("[train]", "[train]\nmomentum = 0.9"),          # unknown train key
])
def test_config_validation_errors(tmp_path, mutate):
    old, new = mutate
    path, _ = _write_config(tmp_path, **{old: new})
    assert main(["gen-catalog", "--config", str(path)]) == EXIT_CONFIG


def test_load_config_values(tmp_path):
    path, workdir = _write_config(tmp_path)
    cfg = load_config(path)
    assert cfg.seed == 5 and cfg.id_mode is True
    assert cfg.n_products == 6 and cfg.n_categories == 2
    assert cfg.model.d_model == 32 and cfg.model.vocab_size == 5
    assert cfg.train.epochs == 2
    assert cfg.path("catalog") == workdir / "catalog.jsonl"
    assert cfg.config_checksum != 0

    over = load_config(path, seed_override=9,
                       out_override=str(tmp_path / "other"))
    assert over.seed == 9
    assert over.path("catalog") == tmp_path / "other" / "catalog.jsonl"
    # the checksum tracks the file bytes, not the overrides
    assert over.config_checksum == cfg.config_checksum


def test_id_mode_type_checked(tmp_path):
    path, _ = _write_config(tmp_path, **{"id_mode = true": 'id_mode = "yes"'})
    with pytest.raises(ConfigError):
        load_config(path)


def test_pipeline_end_to_end(tmp_path, capsys):
    path, workdir = _write_config(tmp_path)
    args = ["--config", str(path)]

    assert main(["gen-catalog", *args]) == EXIT_OK
    catalog_bytes = (workdir / "catalog.jsonl").read_bytes()
    assert main(["gen-catalog", *args]) == EXIT_OK
    assert (workdir / "catalog.jsonl").read_bytes() == catalog_bytes

    assert main(["gen-data", *args]) == EXIT_OK
    for split in ("train", "val", "test"):
        assert (workdir / f"{split}.jsonl").exists()

    assert main(["train", *args]) == EXIT_OK
    assert (workdir / "model.ckpt").exists()

    assert main(["eval", *args]) == EXIT_OK
    for name in ("quant.json", "qual.json", "details.jsonl"):
        assert (workdir / name).exists()
    out = capsys.readouterr().out
    assert "Top-1 Match" in out and "full-scale ref" in out

    quant = workdir / "quant.json"
    assert main(["report", str(quant), str(workdir / "qual.json")]) == EXIT_OK
    assert main(["compare", str(quant), str(quant)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "delta" in out

    # the quant report pairs with this config and catalog
    data = json.loads(quant.read_text())
    assert data["config_checksum"] == load_config(path).config_checksum
    assert data["n_examples"] == 6


def test_seed_override_changes_artifacts(tmp_path):
    path, workdir = _write_config(tmp_path)
    args = ["--config", str(path)]
    assert main(["gen-catalog", *args]) == EXIT_OK
    first = (workdir / "catalog.jsonl").read_bytes()
    assert main(["gen-catalog", *args, "--seed", "6"]) == EXIT_OK
    assert (workdir / "catalog.jsonl").read_bytes() != first


def test_artifact_mismatch_exit_codes(tmp_path):
    path, workdir = _write_config(tmp_path)
    args = ["--config", str(path)]

    # nothing generated yet
    assert main(["eval", *args]) == EXIT_ARTIFACT
    assert main(["train", *args]) == EXIT_ARTIFACT

    assert main(["gen-catalog", *args]) == EXIT_OK
    assert main(["gen-data", *args]) == EXIT_OK
    # catalog regenerated under another seed: dataset now orphaned
    assert main(["gen-catalog", *args, "--seed", "7"]) == EXIT_OK
    assert main(["train", *args]) == EXIT_ARTIFACT


def test_checkpoint_vocab_pairing(tmp_path):
    # train under id_mode, then flip the config: the stored vocabulary no
    # longer matches what the new config would build
    path, workdir = _write_config(tmp_path)
    args = ["--config", str(path)]
    for cmd in ("gen-catalog", "gen-data", "train"):
        assert main([cmd, *args]) == EXIT_OK
    flipped, _ = _write_config(tmp_path, name="flipped.toml",
                               **{"id_mode = true": "id_mode = false"})
    assert main(["eval", "--config", str(flipped)]) == EXIT_ARTIFACT


def test_report_invariant_exit_code(tmp_path):
    path, workdir = _write_config(tmp_path)
    args = ["--config", str(path)]
    for cmd in ("gen-catalog", "gen-data", "train", "eval"):
        assert main([cmd, *args]) == EXIT_OK
    quant = workdir / "quant.json"
    data = json.loads(quant.read_text())
    data["metrics"]["top1_match"] = 0.9  # above top5: invariant breach
    quant.write_text(json.dumps(data))
    assert main(["report", str(quant)]) == EXIT_REPORT_INVARIANT


def test_report_rejects_unknown_file(tmp_path):
    path = tmp_path / "junk.json"
    path.write_text('{"kind": "mystery"}')
    assert main(["report", str(path)]) == EXIT_ARTIFACT
    path.write_text("{not json")
    assert main(["report", str(path)]) == EXIT_ARTIFACT
    assert main(["report", str(tmp_path / "absent.json")]) == EXIT_ARTIFACT


def test_query_one_shot_and_repl(tmp_path, capsys, monkeypatch):
    path, workdir = _write_config(tmp_path)
    args = ["--config", str(path)]
    for cmd in ("gen-catalog", "gen-data", "train"):
        assert main([cmd, *args]) == EXIT_OK

    assert main(["query", *args, "looking for a chair", "-k", "2"]) == EXIT_OK
    out = capsys.readouterr().out
    assert ("no recommendation" in out) or ("1. ART-" in out)

    monkeypatch.setattr("sys.stdin", io.StringIO(
        ":k 2\n:k zero\n\nlooking for a chair\n:quit\n"))
    assert main(["query", *args]) == EXIT_OK
    out = capsys.readouterr().out
    assert "k = 2" in out
    assert "usage: :k N" in out
