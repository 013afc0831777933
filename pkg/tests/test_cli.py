import json

import numpy as np
import pytest

from flowpost.cli import main, read_csv


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def funnel_model_file(workdir):
    data = workdir / "funnel.csv"
    assert main(["simulate", "--task", "funnel", "--num", "1000", "--seed", "1",
                 "--out", str(data)]) == 0
    cfg = workdir / "cfg.json"
    cfg.write_text(json.dumps({"train": {"batch": 64}, "arch": {"hidden": [16, 16]}}))
    model = workdir / "funnel_model.json"
    assert main(["train", "--data", str(data), "--config", str(cfg), "--steps", "50",
                 "--out", str(model)]) == 0
    return model


def test_simulate_is_reproducible(workdir):
    a, b = workdir / "a.csv", workdir / "b.csv"
    for out in (a, b):
        assert main(["simulate", "--task", "funnel", "--num", "1000", "--seed", "7",
                     "--out", str(out)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert (workdir / "a.csv.manifest.json").read_text() == \
        (workdir / "b.csv.manifest.json").read_text()
    meta = json.loads((workdir / "a.csv.meta.json").read_text())
    assert meta["seed"] == 7 and meta["n"] == 1


def test_simulate_sir_shape(workdir):
    out = workdir / "sir.csv"
    assert main(["simulate", "--task", "sir", "--prior", "lognormal", "--num", "5000",
                 "--out", str(out)]) == 0
    header, data = read_csv(out)
    assert data.shape == (5000, 9)
    assert sum(h.startswith("y_") for h in header) == 7
    assert sum(h.startswith("theta_") for h in header) == 2


def test_unknown_task_exits_2(workdir, capsys):
    assert main(["simulate", "--task", "nosuch", "--num", "5", "--out",
                 str(workdir / "x.csv")]) == 2
    assert "unknown task" in capsys.readouterr().err


def test_bad_flags_exit_2():
    with pytest.raises(SystemExit) as info:
        main(["sample", "--model"])
    assert info.value.code == 2


def test_malformed_inputs_exit_2(workdir, funnel_model_file):
    bad = workdir / "bad.json"
    bad.write_text("[]")
    assert main(["sample", "--model", str(bad), "--obs", "1", "--out",
                 str(workdir / "s.csv")]) == 2
    assert main(["sample", "--model", str(funnel_model_file), "--obs", "1,2", "--out",
                 str(workdir / "s.csv")]) == 2
    assert main(["sample", "--model", str(funnel_model_file), "--obs", "abc", "--out",
                 str(workdir / "s.csv")]) == 2
    assert main(["train", "--data", str(workdir / "missing.csv"), "--out",
                 str(workdir / "m.json")]) == 2


@pytest.mark.parametrize("mode", ["exact", "fixed_y"])
def test_sample_modes(workdir, funnel_model_file, mode):
    out = workdir / f"draws_{mode}.csv"
    assert main(["sample", "--model", str(funnel_model_file), "--obs", "1.0", "--num", "5000",
                 "--mode", mode, "--steps", "10", "--out", str(out)]) == 0
    header, data = read_csv(out)
    assert header == ["theta_0"] and data.shape == (5000, 1)
    man = json.loads((workdir / f"draws_{mode}.csv.manifest.json").read_text())
    assert man["mode"] == {"exact": "exact_ytraj", "fixed_y": "fixed_y"}[mode]
    assert man["seed"] == 0 and len(man["config_hash"]) == 16


def test_seed_env_override(workdir, funnel_model_file, monkeypatch):
    def run(name):
        out = workdir / name
        main(["sample", "--model", str(funnel_model_file), "--obs", "0.5", "--num", "20",
              "--steps", "5", "--seed", "1", "--out", str(out)])
        return out.read_bytes()

    base = run("s1.csv")
    monkeypatch.setenv("FLOWPOST_SEED", "99")
    assert run("s2.csv") != base
    assert json.loads((workdir / "s2.csv.manifest.json").read_text())["seed"] == 99


def test_rank_and_eval(workdir, funnel_model_file, capsys):
    out = workdir / "ranks.csv"
    assert main(["rank", "--model", str(funnel_model_file), "--obs", "0.5",
                 "--theta", "0.0;1.0;-2.0", "--steps", "10", "--out", str(out)]) == 0
    header, data = read_csv(out)
    assert header == ["rank", "sign_0"] and data.shape == (3, 2)
    assert np.all(np.abs(data[:, 1]) == 1)
    a = workdir / "draws_exact.csv"
    assert main(["eval", "--metric", "w2", "--a", str(a), "--b", str(a)]) == 0
    assert json.loads(capsys.readouterr().out.strip().splitlines()[-1])["value"] == 0.0


def test_numeric_failure_exits_3(workdir, funnel_model_file):
    doc = json.loads(funnel_model_file.read_text())
    doc["g_net"]["weights"][0]["data"][0] = 1e308
    broken = workdir / "broken.json"
    broken.write_text(json.dumps(doc))
    with np.errstate(all="ignore"):
        assert main(["sample", "--model", str(broken), "--obs", "1e300", "--num", "10",
                     "--steps", "5", "--out", str(workdir / "nan.csv")]) == 3


def test_credible_writes_nested_boundaries(workdir, small_monotone, capsys):
    from flowpost.checkpoint import save_model

    model, task = small_monotone
    path = workdir / "mono.json"
    save_model(model, path)
    y = ",".join(f"{v:.6f}" for v in task.observe(np.random.default_rng(0))[1])
    prefix = workdir / "cred"
    assert main(["credible", "--model", str(path), "--obs", y, "--tau-list", "0.5,0.9",
                 "--m", "200", "--steps", "20", "--out-prefix", str(prefix)]) == 0
    assert "crossings: 0" in capsys.readouterr().out
    header, data = read_csv(f"{prefix}_tau0.5.csv")
    assert header == ["tau", "bx_1", "bx_2"] and data.shape == (200, 3)
    assert (workdir / "cred_tau0.9.csv").exists()


def test_bench_quick_runs_a_cheap_check(capsys):
    assert main(["bench", "--name", "ode_order"]) == 0
    assert "[PASS] C10" in capsys.readouterr().out
