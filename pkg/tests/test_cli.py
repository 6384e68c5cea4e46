import json

import pytest

from leadkin.cli import PipelineConfig, main, run_pipeline
from leadkin.demo import make_demo_events

ARTIFACTS = ("params.csv", "combined.csv", "model.json", "synthetic.csv", "report.json")


@pytest.fixture(scope="module")
def demo_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("demo") / "events.csv"
    make_demo_events(path, seed=7)
    return path


def fast_config(demo_csv, workdir):
    return PipelineConfig(
        input=str(demo_csv),
        workdir=str(workdir),
        seed=123,
        n_synth=400,
        n_perm=100,
    )


class TestPipeline:
    def test_full_run_writes_artifacts(self, demo_csv, tmp_path):
        config = fast_config(demo_csv, tmp_path / "out")
        paths = run_pipeline(config)
        assert [p.name for p in paths] == list(ARTIFACTS)
        for p in paths:
            assert p.exists() and p.stat().st_size > 0
        report = json.loads((tmp_path / "out" / "report.json").read_text())
        assert set(report["parameters"]) == {"v_c", "a1", "a2", "tau_s", "tau_1", "tau_2"}

    def test_single_stage_requires_upstream_artifacts(self, demo_csv, tmp_path):
        config = fast_config(demo_csv, tmp_path / "out")
        rc = main(["pipeline", "--input", str(demo_csv), "--workdir", str(tmp_path / "out"), "--stage", "generate"])
        assert rc == 2  # model artifact missing

    def test_missing_input_exit_code(self, tmp_path):
        rc = main(["fit", "--input", str(tmp_path / "nope.csv"), "--output", str(tmp_path / "params.csv")])
        assert rc == 2

    def test_config_round_trip(self, tmp_path):
        config = PipelineConfig(seed=9, d_thd=0.5, n_synth=123)
        doc = config.to_json()
        path = tmp_path / "config.json"
        path.write_text(json.dumps(doc))
        loaded = PipelineConfig.load(path)
        assert loaded == config

    def test_unknown_config_key_rejected(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"no_such_knob": 1}))
        rc = main(["--config", str(path), "pipeline"])
        assert rc == 2


class TestCliSubcommands:
    def test_fit_then_combine_then_model(self, demo_csv, tmp_path):
        params = tmp_path / "params.csv"
        combined = tmp_path / "combined.csv"
        model = tmp_path / "model.json"
        assert main(["fit", "--input", str(demo_csv), "--output", str(params), "--seed", "3"]) == 0
        assert params.exists() and params.with_suffix(".counts.json").exists()
        assert main(["combine", "--params", str(params), "--output", str(combined)]) == 0
        quantile_out = tmp_path / "combined_q.csv"
        assert main([
            "combine", "--params", str(params), "--output", str(quantile_out),
            "--d-thd-quantile", "0.6",
        ]) == 0
        assert quantile_out.exists()
        assert main(["model", "--input", str(combined), "--output", str(model)]) == 0
        doc = json.loads(model.read_text())
        assert doc["schema"].startswith("lead-kinematics-model/")
        synthetic = tmp_path / "synthetic.csv"
        profiles = tmp_path / "profiles.csv"
        rc = main([
            "generate", "--model", str(model), "--n", "200", "--seed", "4",
            "--output", str(synthetic), "--profiles-out", str(profiles), "--dt", "0.5",
        ])
        assert rc == 0
        assert len(synthetic.read_text().splitlines()) == 201
        header = profiles.read_text().splitlines()[0]
        assert header == "event_id,t,v"
        report = tmp_path / "report.json"
        rc = main([
            "validate", "--raw", str(combined), "--synthetic", str(synthetic),
            "--alpha", "0.10", "--output", str(report), "--seed", "5",
        ])
        assert rc == 0
