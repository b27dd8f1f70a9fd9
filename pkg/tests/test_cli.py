import csv
import json

from equivar_act.activations import ActivationSpec
from equivar_act.cli import main
from equivar_act.net import init_model, load_model, save_model
from equivar_act.training import TrainConfig, dataset_loss, get_task, make_dataset, train


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


class TestCheckEquivariance:
    def test_default_passes(self, capsys, tmp_path):
        code, _, err = run(capsys, "check-equivariance", "--trials", "200", "--out", str(tmp_path / "r.json"))
        assert code == 0, err
        report = json.loads((tmp_path / "r.json").read_text())
        assert report["pass"]
        assert all(c["max_scaled_error"] <= 1e-10 for c in report["equivariance"])
        cases = [(c["family"], c["n"]) for c in report["equivariance"]]
        assert len(cases) == len(set(cases))

    def test_zero_tolerance_fails(self, capsys):
        code, _, err = run(capsys, "check-equivariance", "--trials", "50", "--tolerance", "0")
        assert code == 1
        assert "FAIL" in err

    def test_identity_family_only(self, capsys):
        code, out, _ = run(capsys, "check-equivariance", "--trials", "100", "--families", "identity")
        assert code == 0
        report = json.loads(out)
        assert {c["family"] for c in report["equivariance"]} == {"identity"}
        assert max(c["max_error"] for c in report["equivariance"]) <= 1e-15

    def test_deterministic_modulo_timing(self, capsys):
        reports = []
        for _ in range(2):
            _, out, _ = run(capsys, "check-equivariance", "--trials", "20", "--dim", "2,8", "--seed", "9")
            r = json.loads(out)
            r.pop("runtime_s")
            reports.append(r)
        assert reports[0] == reports[1]

    def test_unknown_family_is_usage_error(self, capsys):
        assert run(capsys, "check-equivariance", "--families", "swish")[0] == 2

    def test_bad_dim_is_usage_error(self, capsys):
        assert run(capsys, "check-equivariance", "--dim", "0")[0] == 2
        assert run(capsys, "check-equivariance", "--dim", "x")[0] == 2

    def test_unwritable_output(self, capsys, tmp_path):
        code, _, err = run(capsys, "check-equivariance", "--trials", "5", "--out", str(tmp_path / "no" / "r.json"))
        assert code == 3


class TestConfig:
    def test_file_then_flags(self, capsys, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"trials": 7, "dim": [2], "families": ["identity"], "seed": 4}))
        _, out, _ = run(capsys, "check-equivariance", "--config", str(cfg))
        r = json.loads(out)
        assert (r["trials"], r["dims"], r["seed"]) == (7, [2], 4)
        _, out, _ = run(capsys, "check-equivariance", "--config", str(cfg), "--trials", "3")
        assert json.loads(out)["trials"] == 3

    def test_unknown_key(self, capsys, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text('{"trails": 5}')
        assert run(capsys, "check-equivariance", "--config", str(cfg))[0] == 2

    def test_missing_config_file(self, capsys, tmp_path):
        assert run(capsys, "check-equivariance", "--config", str(tmp_path / "none.json"))[0] == 3

    def test_env_seed(self, capsys, monkeypatch):
        monkeypatch.setenv("EQUIVAR_SEED", "77")
        _, out, _ = run(capsys, "check-equivariance", "--trials", "2", "--dim", "1", "--families", "identity")
        assert json.loads(out)["seed"] == 77
        _, out, _ = run(capsys, "check-equivariance", "--trials", "2", "--dim", "1", "--families", "identity", "--seed", "1")
        assert json.loads(out)["seed"] == 1

    def test_bad_env_seed(self, capsys, monkeypatch):
        monkeypatch.setenv("EQUIVAR_SEED", "abc")
        assert run(capsys, "grad-check", "--trials", "1")[0] == 2

    def test_unknown_flag(self, capsys):
        assert run(capsys, "train", "--bogus")[0] == 2

    def test_no_command(self, capsys):
        assert run(capsys)[0] == 2


class TestGradCheck:
    def test_passes(self, capsys, tmp_path):
        code, _, err = run(capsys, "grad-check", "--out", str(tmp_path / "g.json"))
        assert code == 0, err
        report = json.loads((tmp_path / "g.json").read_text())
        assert len(report["models"]) == 20
        assert all(m["max_error"] <= 1e-5 for m in report["models"])


class TestTrainEval:
    def test_identity_fit(self, capsys, tmp_path):
        code, out, _ = run(capsys, "train", "--task", "identity-fit", "--out", str(tmp_path))
        assert code == 0
        summary = json.loads(out)
        assert summary["ratio"] <= 0.01
        rows = list(csv.reader(open(tmp_path / "history.csv")))
        assert rows[0] == ["step", "loss"]
        assert len(rows) == 2001 + 1
        assert float(rows[-1][1]) == summary["final_loss"]

    def test_zero_steps_still_writes(self, capsys, tmp_path):
        code, out, _ = run(capsys, "train", "--steps", "0", "--out", str(tmp_path))
        assert code == 0
        assert json.loads(out)["ratio"] == 1.0
        assert (tmp_path / "model.json").exists() and (tmp_path / "history.csv").exists()

    def test_divergence_exit_code(self, capsys, tmp_path):
        assert run(capsys, "train", "--lr", "50", "--out", str(tmp_path))[0] == 4

    def test_bad_momentum(self, capsys, tmp_path):
        assert run(capsys, "train", "--momentum", "1", "--out", str(tmp_path))[0] == 2

    def test_eval_matches_training(self, capsys, tmp_path):
        code, out, _ = run(capsys, "train", "--task", "teacher-student", "--steps", "300", "--seed", "3",
                           "--out", str(tmp_path))
        final = json.loads(out)["final_loss"]
        model = str(tmp_path / "model.json")
        code, out, _ = run(capsys, "eval", "--model", model, "--task", "teacher-student", "--seed", "3")
        assert code == 0
        result = json.loads(out)
        assert abs(result["loss"] - final) <= 1e-12
        assert result["equivariance_error"] <= 1e-9
        _, out, _ = run(capsys, "eval", "--model", model, "--task", "teacher-student", "--seed", "3",
                        "--apply-unitary", "5")
        assert abs(json.loads(out)["loss"] - final) <= 1e-9

    def test_eval_corrupt_model(self, capsys, tmp_path):
        bad = tmp_path / "m.json"
        bad.write_text('{"schema": "equivar-act/1", "layers": [')
        code, _, err = run(capsys, "eval", "--model", str(bad))
        assert code == 3
        assert "line 1" in err

    def test_eval_needs_model(self, capsys):
        assert run(capsys, "eval")[0] == 2

    def test_eval_shape_mismatch(self, capsys, tmp_path):
        save_model(init_model([3, 1], 4, ActivationSpec.identity(), seed=0), tmp_path / "other.json")
        assert run(capsys, "eval", "--model", str(tmp_path / "other.json"))[0] == 2


def test_saved_model_reproduces_library_training(tmp_path, capsys):
    run(capsys, "train", "--task", "identity-fit", "--steps", "50", "--seed", "2", "--out", str(tmp_path))
    m, h = train(TrainConfig(steps=50, seed=2), "identity-fit")
    loaded = load_model(tmp_path / "model.json")
    x, t = make_dataset(get_task("identity-fit"), 2)
    assert dataset_loss(loaded, x, t) == h[-1]
