import json

import pandas as pd
import pytest

from app.cli.commands import main, parse_extra
from app.config.config import ExperimentConfig, Subcommand
from app.errors import LabError
from app.pipeline import experiments
from app.pipeline.experiment_state import ExperimentResult, InvariantCheck
from app.workflow.director import GraphDirector

LIMIT = "20000"


def _run(tmp_path, *argv):
    return main(["run", *argv, "--out", str(tmp_path)])


def _json(path):
    return json.loads(path.read_text())


def test_parse_extra():
    assert parse_extra(["--k-hi", "2", "--h=0,0.5", "--lower_sign", "-1"]) == {
        "k_hi": "2", "h": "0,0.5", "lower_sign": "-1"}
    with pytest.raises(LabError):
        parse_extra(["--t"])
    with pytest.raises(LabError):
        parse_extra(["stray"])


def test_resolve_splits_globals_from_params():
    config = ExperimentConfig.resolve("walk", {"seed": "3", "t": "1000"}, {"seed": 5, "h": "0.5", "threads": None})
    assert config.seed == 5 and config.threads == 1
    assert config.params == {"t": "1000", "h": "0.5"}
    assert config.subcommand is Subcommand.WALK


def test_walk(tmp_path):
    assert _run(tmp_path, "walk", "--t", "1000", "--h", "0,0.5", "--limit", LIMIT) == 0
    table = pd.read_csv(tmp_path / "walk.csv")
    assert list(table.columns) == ["t", "h", "k", "S_k"]
    assert len(table) == 6
    meta = _json(tmp_path / "walk.meta.json")
    assert meta["config"]["subcommand"] == "walk"
    assert meta["config"]["checks"][0]["passed"]


def test_config_file_under_flags(tmp_path):
    config_file = tmp_path / "walk.env"
    config_file.write_text("# walk at a fixed height\nt=2000\nk_hi=1\nseed=9\nlimit=20000\n")
    out = tmp_path / "out"
    assert main(["run", "walk", "--config", str(config_file), "--k-hi", "2", "--out", str(out)]) == 0
    table = pd.read_csv(out / "walk.csv")
    assert table["t"].unique().tolist() == [2000.0]
    assert table["k"].max() == 2
    assert _json(out / "walk.meta.json")["config"]["seed"] == 9


def test_errors_exit_one(tmp_path, capsys):
    assert _run(tmp_path, "walk", "--t", "1000", "--bogus", "1") == 1
    assert _run(tmp_path, "walk", "--t", "1000", "--replicas", "0") == 1
    assert _run(tmp_path, "walk", "--t", "1000", "--k_hi", "3", "--limit", LIMIT) == 1
    assert main(["run", "walk", "--config", str(tmp_path / "missing.env")]) == 1
    assert "error" in capsys.readouterr().err
    assert not (tmp_path / "walk.csv").exists()


def test_failed_invariant_exits_two_and_still_writes(tmp_path, monkeypatch):
    def failing(config, params):
        return ExperimentResult(tables={"walk": pd.DataFrame({"x": [1.0]})},
                                checks=[InvariantCheck(name="always_fails", passed=False)])

    monkeypatch.setitem(experiments.EXPERIMENTS, Subcommand.WALK, (experiments.WalkParams, failing))
    assert _run(tmp_path, "walk", "--t", "1") == 2
    assert (tmp_path / "walk.csv").exists()


def test_graph_stops_on_invalid_params(tmp_path):
    config = ExperimentConfig(subcommand="ballot", params={"t": "-3"}, out=tmp_path)
    final = GraphDirector.experiment().invoke({"config": config})
    assert final["exit_code"] == 1 and "t" in final["error"]
    assert "artifacts" not in final


def test_ballot_is_reproducible(tmp_path):
    argv = ["run", "ballot", "--replicas", "20000", "--seed", "7", "--threads", "2", "--out", str(tmp_path)]
    assert main(argv) == 0
    first = (tmp_path / "ballot.json").read_bytes()
    assert main(argv) == 0
    assert (tmp_path / "ballot.json").read_bytes() == first
    document = _json(tmp_path / "ballot.json")
    assert document["exact_reference"] == pytest.approx(0.0768836536133642)
    assert document["config"]["seed"] == 7


def test_ballot_with_reflection(tmp_path):
    assert _run(tmp_path, "ballot", "--replicas", "2000", "--alpha", "0.3", "--delta", "0.7", "--y", "30",
                "--lower_sign", "-1", "--reflection", "true") == 0
    document = _json(tmp_path / "ballot.json")
    assert document["exact_reference"] is None
    assert "y_above_t_to_one_tenth" in document["report"]["flags"]
    assert document["reflection"]["holds"]


def test_sieve_cache(tmp_path):
    path = tmp_path / "primes.zxlb"
    assert _run(tmp_path, "sieve-cache", "--limit", "1000", "--path", str(path)) == 0
    assert path.exists()
    assert _json(tmp_path / "sieve_cache.json")["primes"] == 168


def test_barrier_dump(tmp_path):
    assert _run(tmp_path, "barrier-dump", "--n", "8", "--y", "2") == 0
    table = pd.read_csv(tmp_path / "barriers.csv")
    assert table["k"].tolist() == [2, 3, 4, 5, 6]
    assert "recentering" in _json(tmp_path / "walk_config.json")


def test_model_sample_gaussian(tmp_path):
    assert _run(tmp_path, "model-sample", "--model", "gaussian", "--replicas", "5", "--limit", LIMIT) == 0
    table = pd.read_csv(tmp_path / "trajectories.csv")
    assert len(table) == 5 * 3 * 2


def test_model_sample_steinhaus(tmp_path):
    assert _run(tmp_path, "model-sample", "--h", "0,0.25", "--replicas", "10", "--limit", LIMIT) == 0
    assert len(pd.read_csv(tmp_path / "trajectories.csv")) == 10 * 3 * 2


def test_model_verify(tmp_path):
    assert _run(tmp_path, "model-verify", "--replicas", "2000", "--limit", LIMIT) == 0
    report = _json(tmp_path / "model_verify.json")
    assert [level["k"] for level in report["levels"]] == [0, 1, 2]
    assert report["decoupling"]["holds"]
    assert set(report["pnt_agreement"]) == {"1", "2"}
    berry = report["berry_esseen"]["levels"]
    assert [level["k"] for level in berry] == [0, 1, 2]
    assert all(level["gaussian_share"] == 0.0 for level in berry)


def test_model_verify_flags_gaussian_tail(tmp_path, monkeypatch):
    from app.config.config import get_settings
    monkeypatch.setenv("ZXLB_STEINHAUS_EXACT_PRIMES", "50")
    get_settings.cache_clear()
    assert _run(tmp_path, "model-verify", "--replicas", "2000", "--limit", LIMIT) == 2
    berry = _json(tmp_path / "model_verify.json")["berry_esseen"]["levels"]
    assert berry[-1]["gaussian_share"] > get_settings().steinhaus_max_gaussian_share


def test_moments(tmp_path):
    assert _run(tmp_path, "moments", "--n", "8", "--y", "2", "--replicas", "100", "--seeds", "1,2",
                "--limit", LIMIT) == 0
    report = _json(tmp_path / "moments.json")
    assert len(report["per_seed"]) == 2


def test_moments_grid_limit(tmp_path):
    assert _run(tmp_path, "moments", "--n", "8", "--y", "2", "--grid-max", "10", "--limit", LIMIT) == 1


def test_tail_on_field(tmp_path):
    assert _run(tmp_path, "tail", "--n", "4", "--replicas", "10000", "--y_grid", "0.5,1,1.5",
                "--limit", LIMIT) == 0
    table = pd.read_csv(tmp_path / "tail.csv")
    assert table["y"].tolist() == [0.5, 1.0, 1.5]
    assert "spread" in _json(tmp_path / "tail_fit.json")


def test_zeta_max(tmp_path):
    assert _run(tmp_path, "zeta-max", "--t", "1000", "--half_width", "0.5") == 0
    table = pd.read_csv(tmp_path / "zeta_max.csv")
    assert abs(table["h_star"].iloc[0]) <= 0.5


@pytest.mark.slow
def test_euler_check(tmp_path):
    assert _run(tmp_path, "euler-check", "--t", "1000,5000") == 0


@pytest.mark.slow
def test_mollifier_certify(tmp_path):
    assert _run(tmp_path, "mollifier-certify", "--nu", "4,8,16,32") == 0
    document = _json(tmp_path / "mollifier_certificate.json")
    assert document["item2_holds"] and document["gap_monotone"]
