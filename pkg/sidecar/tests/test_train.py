"""Trainer-contract behavior on the tiny model."""

import json

from deed_sidecar.train import main, train


def hparams_file(tmp_path, **overrides):
    base = {
        "learning_rate": 1e-3,
        "batch_size": 1,
        "grad_accum_steps": 1,
        "epochs": 2,
        "beta1": 0.9,
        "beta2": 0.9,
        "schedule": "linear",
        "seed": 0,
    }
    base.update(overrides)
    path = tmp_path / "hparams.json"
    path.write_text(json.dumps(base))
    return path


def pairs_file(tmp_path, pairs):
    path = tmp_path / "train.pairs"
    path.write_text(
        "".join(json.dumps({"prompt": p, "completion": c}) + "\n" for p, c in pairs)
    )
    return path


PAIRS = [
    ("Write a function add(a, b).", "def add(a, b):\n    return a + b\n"),
    ("Write a function sub(a, b).", "def sub(a, b):\n    return a - b\n"),
    ("Write a function neg(a).", "def neg(a):\n    return -a\n"),
    ("Write a function one().", "def one():\n    return 1\n"),
    ("Write a function two().", "def two():\n    return 2\n"),
]


class TestFullMode:
    def test_contract_smoke(self, tiny_model_dir, tmp_path):
        out = tmp_path / "out"
        manifest = train(
            pairs_file(tmp_path, PAIRS),
            str(tiny_model_dir),
            "full",
            hparams_file(tmp_path, epochs=2),
            out,
        )
        written = json.loads((out / "result").read_text())
        assert written == manifest
        assert set(manifest) == {"model_ref", "final_loss", "epochs_run"}
        assert manifest["epochs_run"] == 2
        assert manifest["final_loss"] >= 0.0
        model_dir = out / "model"
        assert (model_dir / "config.json").exists()
        assert (model_dir / "tokenizer_config.json").exists()
        epochs = json.loads((out / "epochs").read_text())
        assert len(epochs) == 2

    def test_overfit_one_sample_loss_strictly_decreases(self, tiny_model_dir, tmp_path):
        out = tmp_path / "out"
        train(
            pairs_file(tmp_path, PAIRS[:1]),
            str(tiny_model_dir),
            "full",
            hparams_file(tmp_path, epochs=10, learning_rate=1e-3),
            out,
        )
        losses = json.loads((out / "epochs").read_text())
        assert len(losses) == 10
        assert all(b < a for a, b in zip(losses, losses[1:])), losses

    def test_saved_model_is_loadable_and_changed(self, tiny_model_dir, tmp_path):
        import torch
        from transformers import AutoModelForCausalLM

        out = tmp_path / "out"
        manifest = train(
            pairs_file(tmp_path, PAIRS[:2]),
            str(tiny_model_dir),
            "full",
            hparams_file(tmp_path, epochs=1),
            out,
        )
        trained = AutoModelForCausalLM.from_pretrained(manifest["model_ref"])
        original = AutoModelForCausalLM.from_pretrained(tiny_model_dir)
        drift = [
            not torch.allclose(p1, p2)
            for (_, p1), (_, p2) in zip(
                trained.named_parameters(), original.named_parameters()
            )
        ]
        assert any(drift)  # full fine-tuning moved the weights


class TestLoraMode:
    def test_adapter_config_records_rank_and_alpha(self, tiny_model_dir, tmp_path):
        out = tmp_path / "out"
        train(
            pairs_file(tmp_path, PAIRS[:3]),
            str(tiny_model_dir),
            "lora",
            hparams_file(tmp_path, epochs=1, lora_rank=128, lora_alpha=8.0),
            out,
        )
        record = json.loads((out / "model" / "adapter_config.json").read_text())
        assert record["lora_rank"] == 128
        assert record["lora_alpha"] == 8.0
        assert record["mode"] == "lora"
        assert record["target_modules"]
        assert (out / "adapter_model.pt").exists()

    def test_lora_without_rank_fails_cleanly(self, tiny_model_dir, tmp_path, capsys):
        rc = main(
            [
                "--train-file", str(pairs_file(tmp_path, PAIRS[:1])),
                "--base-model", str(tiny_model_dir),
                "--mode", "lora",
                "--hparams", str(hparams_file(tmp_path)),
                "--output-dir", str(tmp_path / "out"),
            ]
        )
        assert rc == 2
        assert "lora_rank" in capsys.readouterr().err


class TestCliErrors:
    def test_malformed_training_file(self, tiny_model_dir, tmp_path, capsys):
        bad = tmp_path / "train.pairs"
        bad.write_text('{"prompt": "p"}\n')
        rc = main(
            [
                "--train-file", str(bad),
                "--base-model", str(tiny_model_dir),
                "--mode", "full",
                "--hparams", str(hparams_file(tmp_path)),
                "--output-dir", str(tmp_path / "out"),
            ]
        )
        assert rc == 2
        assert "prompt and completion" in capsys.readouterr().err
        assert not (tmp_path / "out" / "result").exists()

    def test_unloadable_model(self, tmp_path, capsys):
        rc = main(
            [
                "--train-file", str(pairs_file(tmp_path, PAIRS[:1])),
                "--base-model", str(tmp_path / "no-model"),
                "--mode", "full",
                "--hparams", str(hparams_file(tmp_path)),
                "--output-dir", str(tmp_path / "out"),
            ]
        )
        assert rc == 2
        assert "cannot load base model" in capsys.readouterr().err
