import dataclasses
import json

import numpy as np
import pytest

from predin.cli import main as cli_main
from predin.encoder import EncoderSpec
from predin.harness import (
    ABLATION_VARIANTS,
    ExperimentConfig,
    SoftmaxModel,
    config_from_dict,
    load_config,
    load_dataset,
    run_ablation,
    run_experiment,
    run_seed,
    softmax_score_fn,
)


TINY_DATASET = {
    "type": "synthetic",
    "n_classes": 5,
    "channels": 2,
    "trials": 3,
    "recording_ms": 450.0,
    "sampling_rate_hz": 400.0,
    "separation": 1.5,
    "noise_scale": 0.4,
    "data_seed": 99,
}


def tiny_config(**overrides):
    base = dict(
        dataset=TINY_DATASET,
        window_ms=200.0,
        step_ms=50.0,
        n_known=3,
        seeds=(1,),
        variant="predin",
        hidden_dims=(16,),
        feature_dim=8,
        epochs=4,
        batch_size=64,
        lr=0.002,
        output_dir="unused",
    )
    base.update(overrides)
    return ExperimentConfig(**base)


class TestConfig:
    def test_json_roundtrip(self, tmp_path):
        cfg = tiny_config(seeds=(3, 4), variant="dual")
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg.to_dict()))
        loaded = load_config(path)
        assert loaded == dataclasses.replace(cfg)

    def test_unknown_keys_rejected(self):
        with pytest.raises(ValueError, match="unknown config keys"):
            config_from_dict({"variant": "predin", "typo_field": 1})

    def test_unknown_variant_rejected(self):
        with pytest.raises(ValueError, match="variant"):
            tiny_config(variant="quadruple")

    def test_empty_seeds_rejected(self):
        with pytest.raises(ValueError, match="seed"):
            tiny_config(seeds=())

    def test_defaults_fill(self):
        cfg = config_from_dict({})
        assert cfg.variant == "predin"
        assert cfg.retention == 0.95
        assert cfg.hyperparams.m1 == 0.5
        assert cfg.hyperparams.m2 == 1.0


class TestVariantLattice:
    def test_predin_with_zero_weights_equals_dual(self):
        hp = dict(gamma=0.0, alpha=0.0)
        cfg_predin = tiny_config(variant="predin")
        cfg_predin = dataclasses.replace(
            cfg_predin, hyperparams=dataclasses.replace(cfg_predin.hyperparams, **hp)
        )
        cfg_dual = dataclasses.replace(cfg_predin, variant="dual")
        recordings, classes = load_dataset(cfg_predin)
        r_predin = run_seed(cfg_predin, recordings, classes, 1).report
        r_dual = run_seed(cfg_dual, recordings, classes, 1).report
        assert r_predin.to_dict() == r_dual.to_dict()

    def test_dual_branch_a_equals_pl_baseline(self):
        cfg_dual = tiny_config(variant="dual")
        cfg_pl = dataclasses.replace(cfg_dual, variant="pl_baseline")
        recordings, classes = load_dataset(cfg_dual)
        dual = run_seed(cfg_dual, recordings, classes, 1)
        pl = run_seed(cfg_pl, recordings, classes, 1)
        for s_dual, s_pl in zip(dual.scored, pl.scored):
            np.testing.assert_array_equal(
                s_dual.sims_per_branch[0], s_pl.sims_per_branch[0]
            )


class TestSoftmaxBaseline:
    def test_untrained_zero_head_gives_uniform_smax(self):
        spec = EncoderSpec(input_dim=4, hidden_dims=(), output_dim=3)
        from predin.encoder import init_encoder

        enc = init_encoder(spec, seed=0)
        model = SoftmaxModel(encoder=enc, head_w=np.zeros((5, 3)), head_b=np.zeros(5))
        probs = softmax_score_fn(model)(np.ones((2, 4)))
        np.testing.assert_allclose(probs, 0.2)
        np.testing.assert_allclose(probs.max(axis=1), 1 / 5)

    def test_trains_and_scores(self):
        cfg = tiny_config(variant="softmax", epochs=10)
        recordings, classes = load_dataset(cfg)
        result = run_seed(cfg, recordings, classes, 1)
        assert result.report.acc > 0.5
        # softmax scores are probabilities
        assert all(0.0 <= s.s_max <= 1.0 for s in result.scored)
        assert result.report.incon is None


class TestRunExperiment:
    def test_report_and_artifacts(self, tmp_path):
        cfg = tiny_config(seeds=(1, 2), output_dir=str(tmp_path / "out"))
        record = run_experiment(cfg)
        assert record.aggregate["n_seeds"] == 2
        report = json.loads((tmp_path / "out" / "report.json").read_text())
        assert report["config"]["seeds"] == [1, 2]
        # numeric fields survive the round trip exactly
        assert report["per_seed"][0]["auc"] == record.per_seed[0]["auc"]
        for seed in (1, 2):
            seed_dir = tmp_path / "out" / f"seed_{seed}"
            for name in ("scores.csv", "loss_trace.csv", "checkpoint.npz",
                         "proximity_branch1.csv", "agreement_known.csv"):
                assert (seed_dir / name).exists(), name

    def test_rerun_is_bitwise_identical(self, tmp_path):
        cfg = tiny_config(seeds=(1,), output_dir=str(tmp_path / "out"))
        run_experiment(cfg)
        first = (tmp_path / "out" / "report.json").read_bytes()
        run_experiment(cfg)
        assert (tmp_path / "out" / "report.json").read_bytes() == first

    def test_failed_seed_recorded_and_run_continues(self, tmp_path):
        # magnitudes grow by ~1e6 per step, so 40 epochs guarantees overflow
        cfg = tiny_config(seeds=(1, 2), lr=1e6, epochs=40, output_dir=str(tmp_path / "out"))
        with np.errstate(over="ignore", invalid="ignore"):
            record = run_experiment(cfg)
        assert record.aggregate["failed_seeds"] == [1, 2]
        assert all("error" in row for row in record.per_seed)
        assert (tmp_path / "out" / "report.json").exists()

    def test_unwritable_output_dir(self, tmp_path):
        target = tmp_path / "blocked"
        target.write_text("a file, not a directory")
        cfg = tiny_config(output_dir=str(target / "sub"))
        with pytest.raises(OSError):
            run_experiment(cfg)


class TestAblation:
    def test_table_covers_all_variants(self, tmp_path):
        cfg = tiny_config(seeds=(1,), epochs=3, output_dir=str(tmp_path / "abl"))
        records = run_ablation(cfg)
        assert set(records) == set(ABLATION_VARIANTS)
        table = (tmp_path / "abl" / "ablation_table.csv").read_text().strip().splitlines()
        assert table[0] == "variant,auc,oscr,acc,incon"
        assert len(table) == 1 + len(ABLATION_VARIANTS)
        for variant in ABLATION_VARIANTS:
            assert (tmp_path / "abl" / variant / "report.json").exists()


class TestSequentialVariant:
    def test_k_branches_scored(self):
        cfg = tiny_config(variant="sequential_k", sequential_k=3, epochs=3)
        recordings, classes = load_dataset(cfg)
        result = run_seed(cfg, recordings, classes, 1)
        assert result.scored[0].sims_per_branch.shape[0] == 3
        assert len(result.branches) == 3

    def test_more_perspectives_help_on_average(self):
        # directional trend on the default dataset: K=5 vs K=2 mean AUC
        means = {}
        for k in (2, 5):
            aucs = []
            for seed in (1, 2, 3):
                cfg = ExperimentConfig(
                    variant="sequential_k", sequential_k=k, output_dir="unused"
                )
                recordings, classes = load_dataset(cfg)
                aucs.append(run_seed(cfg, recordings, classes, seed).report.auc)
            means[k] = np.mean(aucs)
        assert means[5] >= means[2]


class TestSoftmaxOnDefaultDataset:
    def test_separable_data_reaches_high_acc(self):
        cfg = ExperimentConfig(variant="softmax", output_dir="unused")
        recordings, classes = load_dataset(cfg)
        result = run_seed(cfg, recordings, classes, 1)
        assert result.report.acc >= 0.95


class TestZeroSeparation:
    def test_downstream_accuracy_near_chance(self):
        ds = dict(TINY_DATASET, separation=0.0)
        cfg = tiny_config(dataset=ds, variant="pl_baseline", epochs=10)
        recordings, classes = load_dataset(cfg)
        result = run_seed(cfg, recordings, classes, 1)
        # 3 known classes: chance is 1/3
        assert result.report.acc < 0.55


class TestCli:
    def _write_config(self, tmp_path):
        cfg = tiny_config(seeds=(1,), output_dir=str(tmp_path / "out"))
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg.to_dict()))
        return path

    def test_run_command(self, tmp_path, capsys):
        path = self._write_config(tmp_path)
        assert cli_main(["run", "--config", str(path)]) == 0
        out = capsys.readouterr().out
        assert "seed 1:" in out
        assert (tmp_path / "out" / "report.json").exists()

    def test_seed_and_out_overrides(self, tmp_path):
        path = self._write_config(tmp_path)
        out2 = tmp_path / "other"
        assert cli_main(["run", "--config", str(path), "--seeds", "2", "--out", str(out2)]) == 0
        report = json.loads((out2 / "report.json").read_text())
        assert report["config"]["seeds"] == [2]

    def test_check_gradients_command(self, capsys):
        assert cli_main(["check-gradients", "--seeds", "1", "--coords", "60"]) == 0
        assert "max_rel_error" in capsys.readouterr().out

    def test_failure_emits_error_json(self, tmp_path, capsys):
        code = cli_main(["run", "--config", str(tmp_path / "missing.json")])
        assert code == 1
        err = json.loads(capsys.readouterr().err.strip())
        assert err["error"] == "FileNotFoundError"
