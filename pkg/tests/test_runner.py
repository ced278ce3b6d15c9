import json
from pathlib import Path

import numpy as np
import pytest

from recourse_mi import cli, runner
from recourse_mi.attack import Guess
from recourse_mi.nn import predict_proba
from recourse_mi.runner import ConfigError, GameSetupError, config_from_dict


def small_raw(**overrides):
    raw = {
        "experiment_id": "t",
        "data": {"kind": "synthetic", "d": 6, "n_per_class": 400,
                 "class_separation": 0.5},
        "model": {"architecture": []},
        "train": {"learning_rate": 0.05, "epochs": 40},
        "recourse": {"algorithm": "scfe", "scfe": {"max_iters": 120}},
        "attacks": {"which": ["cfd"], "n_shadow_models": 4},
        "eval": {"owner_n": 250, "shadow_n": 300, "eval_out_n": 200,
                 "eval_points": 30},
        "seed": 5,
        "workers": 1,
    }
    for key, val in overrides.items():
        if isinstance(val, dict) and isinstance(raw.get(key), dict):
            raw[key].update(val)
        else:
            raw[key] = val
    return raw


@pytest.fixture(scope="module")
def small_report(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = config_from_dict(small_raw(out_dir=str(out)))
    return runner.run_experiment(cfg), out


class TestConfig:
    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            config_from_dict(small_raw(bogus=1))

    def test_nested_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="data.bogus"):
            config_from_dict(small_raw(data={"bogus": 2}))

    def test_unknown_attack_rejected(self):
        with pytest.raises(ConfigError, match="unknown attack"):
            config_from_dict(small_raw(attacks={"which": ["nope"]}))

    def test_file_kind_requires_path(self):
        with pytest.raises(ConfigError, match="path"):
            config_from_dict(small_raw(data={"kind": "file"}))

    def test_bad_recourse_param_is_config_error(self):
        with pytest.raises(ConfigError):
            config_from_dict(small_raw(recourse={"scfe": {"lam": -1.0}}))

    def test_defaults_applied(self):
        cfg = config_from_dict({})
        assert cfg.recourse.algorithm == "scfe"
        assert cfg.train.learning_rate == 1e-4
        assert cfg.train.epochs == 250
        assert cfg.n_shadow_models == 16


class TestPlayGame:
    def test_balanced_and_negatively_classified(self):
        cfg = config_from_dict(small_raw())
        samples = runner.play_game(cfg)
        prep = runner.prepare(cfg)
        n_m = sum(1 for s in samples if s.membership is Guess.MEMBER)
        n_n = len(samples) - n_m
        assert n_m == n_n == 15
        for s in samples:
            assert predict_proba(prep.owner_model, s.point) < 0.5
            assert s.recourse.valid

    def test_deterministic(self):
        cfg1 = config_from_dict(small_raw())
        cfg2 = config_from_dict(small_raw())
        s1 = runner.play_game(cfg1)
        s2 = runner.play_game(cfg2)
        assert [s.point_id for s in s1] == [s.point_id for s in s2]
        for a, b in zip(s1, s2):
            assert np.array_equal(a.point, b.point)
            assert np.array_equal(a.recourse.counterfactual, b.recourse.counterfactual)

    def test_too_few_negatives_errors_with_counts(self):
        # near-total separation: almost nothing is negatively classified
        # once we ask for more points than exist on a side
        raw = small_raw()
        raw["eval"]["eval_points"] = 100000
        cfg = config_from_dict(raw)
        with pytest.raises(GameSetupError, match="negatively-classified"):
            runner.play_game(cfg)


class TestRunExperiment:
    def test_report_artifacts(self, small_report):
        rep, out = small_report
        assert (out / "report.json").exists()
        assert (out / "roc_cfd_standard.csv").exists()
        assert (out / "roc_cfd_reversed.csv").exists()
        assert (out / "scores_cfd.jsonl").exists()
        doc = json.loads((out / "report.json").read_text())
        assert doc["schema_version"] == 1
        assert set(doc["attacks"]["cfd"]["directions"]) == {"standard", "reversed"}
        assert doc["attacks"]["cfd"]["best_direction"] in ("standard", "reversed")

    def test_scores_carry_membership_ground_truth(self, small_report):
        rep, out = small_report
        lines = (out / "scores_cfd.jsonl").read_text().splitlines()
        assert len(lines) == rep.game_meta["n_member"] + rep.game_meta["n_non_member"]
        rec = json.loads(lines[0])
        assert set(rec) >= {"point_id", "attack", "statistic", "score",
                            "direction", "guess_at", "membership"}
        assert rec["membership"] in ("MEMBER", "NON-MEMBER")

    def test_best_direction_has_max_auc(self, small_report):
        rep, _ = small_report
        for name, dirs in rep.attack_metrics.items():
            best = rep.best_direction[name]
            assert dirs[best].auc == max(d.auc for d in dirs.values())

    def test_partitions_disjoint(self, small_report):
        rep, out = small_report
        cfg = config_from_dict(small_raw(out_dir=None))
        prep = runner.prepare(cfg)
        from recourse_mi.data import split_source_rows
        rows = split_source_rows(prep.bundle)
        owner = set(rows["owner_train"])
        shadow = set(rows["shadow_pool"])
        assert not owner & shadow

    def test_distance_attack_stage_takes_no_model(self):
        # threat-model enforcement is structural: the distance attack
        # entry points accept the transcript (+ ensemble), never a Model
        import inspect
        from recourse_mi import attack as attack_mod
        for fn in (attack_mod.cfd_attack_scores, attack_mod.cfd_lrt_attack_scores):
            params = inspect.signature(fn).parameters
            assert "model" not in params
            assert "owner_model" not in params


class TestReproducibility:
    def test_byte_identical_reports_and_worker_invariance(self, tmp_path):
        outs = []
        for i, workers in enumerate((1, 4, 1)):
            out = tmp_path / f"r{i}"
            cfg = config_from_dict(small_raw(out_dir=str(out), workers=workers))
            runner.run_experiment(cfg)
            doc = json.loads((out / "report.json").read_text())
            doc.pop("timing")
            doc["config"].pop("workers")
            doc["config"].pop("out_dir")
            outs.append(json.dumps(doc, sort_keys=True))
        assert outs[0] == outs[1] == outs[2]


class TestSweepAndSummary:
    def test_sweep_emits_reports_and_summary(self, tmp_path):
        raw = small_raw()
        raw["sweep"] = {"d": [4, 6]}
        reports = runner.run_sweep(raw, out_dir=tmp_path)
        assert len(reports) == 2
        assert (tmp_path / "d4" / "report.json").exists()
        assert (tmp_path / "d6" / "report.json").exists()
        summary = (tmp_path / "summary.csv").read_text().splitlines()
        assert summary[0] == "experiment_id,attack,direction,auc,ba,tpr_at_0.1,tpr_at_0.01"
        # one row per (experiment, attack, direction)
        assert len(summary) == 1 + 2 * 1 * 2

    def test_summary_values_match_reports(self, tmp_path):
        raw = small_raw()
        raw["sweep"] = {"seed": [5, 6]}
        reports = runner.run_sweep(raw, out_dir=tmp_path)
        rows = (tmp_path / "summary.csv").read_text().splitlines()[1:]
        by_key = {}
        for row in rows:
            parts = row.split(",")
            by_key[(parts[0], parts[1], parts[2])] = [float(v) for v in parts[3:]]
        for rep in reports:
            for name, dirs in rep.attack_metrics.items():
                for direction, m in dirs.items():
                    vals = by_key[(rep.experiment_id, name, direction)]
                    assert vals == [m.auc, m.balanced_accuracy,
                                    m.tpr_at_fpr[0.1], m.tpr_at_fpr[0.01]]

    def test_unknown_sweep_key(self):
        with pytest.raises(ConfigError, match="sweep"):
            runner.run_sweep({"sweep": {"nope": [1]}})

    def test_emit_summary_requires_reports(self, tmp_path):
        with pytest.raises(ValueError):
            runner.emit_summary([], tmp_path / "s.csv")


class TestCli:
    def test_dp_bound_stdout(self, capsys):
        rc = cli.main(["dp-bound", "--epsilons", "0,0.6931471805599453"])
        out = capsys.readouterr().out.splitlines()
        assert rc == 0
        assert out[0] == "epsilon,ba_bound,refined_ba_bound"
        assert float(out[2].split(",")[1]) == pytest.approx(0.75, abs=1e-12)

    def test_run_and_summarize(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(small_raw()))
        out = tmp_path / "out"
        rc = cli.main(["run", "--config", str(cfg_path), "--out", str(out)])
        assert rc == 0
        assert (out / "report.json").exists()

        rc = cli.main(["summarize", str(out / "report.json"),
                       "--out", str(tmp_path / "summary.csv")])
        assert rc == 0
        lines = (tmp_path / "summary.csv").read_text().splitlines()
        assert lines[0].startswith("experiment_id,attack,direction")

    def test_config_error_exit_code(self, tmp_path, capsys):
        cfg_path = tmp_path / "bad.json"
        cfg_path.write_text(json.dumps({"bogus": True}))
        rc = cli.main(["run", "--config", str(cfg_path)])
        assert rc == 1

    def test_runtime_error_exit_code(self, tmp_path, capsys):
        raw = small_raw()
        raw["eval"]["eval_points"] = 100000  # unsatisfiable game
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(raw))
        rc = cli.main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "o")])
        assert rc == 2

    def test_gen_data_round_trip(self, tmp_path, capsys):
        raw = small_raw()
        raw["data"]["standardize"] = False
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(raw))
        out_csv = tmp_path / "data.csv"
        rc = cli.main(["gen-data", "--config", str(cfg_path), "--out", str(out_csv)])
        assert rc == 0
        from recourse_mi.data import load_tabular
        ds = load_tabular(out_csv, "label", "binary")
        assert ds.n == 800 and ds.d == 6

    def test_train_saves_model(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(small_raw()))
        out = tmp_path / "model"
        rc = cli.main(["train", "--config", str(cfg_path), "--out", str(out)])
        assert rc == 0
        from recourse_mi.nn import load_model
        m = load_model(out)
        assert m.d == 6
        assert (out / "accuracy.json").exists()

    def test_recourse_writes_transcripts(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(small_raw()))
        out = tmp_path / "g.jsonl"
        rc = cli.main(["recourse", "--config", str(cfg_path), "--out", str(out)])
        assert rc == 0
        lines = out.read_text().splitlines()
        assert len(lines) == 30
        rec = json.loads(lines[0])
        assert set(rec) == {"point_id", "membership", "label", "point", "recourse"}

    def test_seed_override_changes_result(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(small_raw()))
        o1, o2 = tmp_path / "a", tmp_path / "b"
        assert cli.main(["run", "--config", str(cfg_path), "--out", str(o1),
                         "--seed", "101"]) == 0
        assert cli.main(["run", "--config", str(cfg_path), "--out", str(o2),
                         "--seed", "102"]) == 0
        d1 = json.loads((o1 / "report.json").read_text())
        d2 = json.loads((o2 / "report.json").read_text())
        assert d1["master_seed"] == 101 and d2["master_seed"] == 102
        assert d1["scores"] != d2["scores"]
