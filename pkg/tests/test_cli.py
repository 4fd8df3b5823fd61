import csv
import json
import subprocess
import sys

import pytest

from sscontagion import cli, pipeline
from sscontagion.io import write_dataset
from sscontagion.synth import synth_region

SMALL = ["--sims", "39"]


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    assert cli.main(["synth", "--out-dir", str(d), "--communities", "4", "--events", "150",
                     "--seed", "3"]) == 0
    return d


def inputs(d):
    return [str(d / "polygons.geojson"), str(d / "events.geojson")]


class TestSeed:
    def test_flag_wins(self):
        assert cli.resolve_seed(5, {cli.SEED_ENV: "9"}) == 5

    def test_env(self):
        assert cli.resolve_seed(None, {cli.SEED_ENV: "0x10"}) == 16

    def test_default(self):
        assert cli.resolve_seed(None, {}) == 0

    def test_bad_env(self):
        with pytest.raises(SystemExit):
            cli.resolve_seed(None, {cli.SEED_ENV: "abc"})

    def test_env_reaches_manifest(self, synth_dir, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.SEED_ENV, "77")
        assert cli.main(["run", *inputs(synth_dir), "--out-dir", str(tmp_path), *SMALL]) == 0
        assert json.loads((tmp_path / "manifest.json").read_text())["seed"] == 77


class TestValidate:
    def test_clean(self, synth_dir, capsys):
        assert cli.main(["validate", *inputs(synth_dir)]) == 0
        assert "violations=0" in capsys.readouterr().out

    def test_orphan(self, synth_dir, tmp_path):
        events = json.loads((synth_dir / "events.geojson").read_text())
        events["features"][0]["properties"]["community_id"] = "nowhere"
        (tmp_path / "e.json").write_text(json.dumps(events))
        assert cli.main(["validate", str(synth_dir / "polygons.geojson"), str(tmp_path / "e.json")]) == 1

    def test_missing_file(self, tmp_path):
        assert cli.main(["validate", str(tmp_path / "a"), str(tmp_path / "b")]) == 1

    def test_schema_error(self, synth_dir, tmp_path):
        (tmp_path / "p.json").write_text('{"type": "FeatureCollection", "features": [{}]}')
        assert cli.main(["run", str(tmp_path / "p.json"), str(synth_dir / "events.geojson"),
                         "--out-dir", str(tmp_path / "o")]) == 1


class TestArgs:
    def test_too_few_sims(self, synth_dir, tmp_path):
        with pytest.raises(SystemExit) as exc:
            cli.main(["run", *inputs(synth_dir), "--out-dir", str(tmp_path), "--sims", "10"])
        assert exc.value.code == 2

    def test_years(self):
        args = cli.build_parser().parse_args(["validate", "a", "b", "--years", "2012,2015"])
        assert args.years.years == (2012, 2015)


class TestRun:
    def test_bundle(self, synth_dir, tmp_path):
        out = tmp_path / "out"
        assert cli.main(["run", *inputs(synth_dir), "--out-dir", str(out), "--seed", "1", *SMALL]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["status"] == "ok" and manifest["n_sims"] == 39
        metrics = rows(out / "metrics.csv")
        assert len(metrics) == 4 * 21
        assert {r["run_id"] for r in metrics} == {manifest["run_id"]}
        assert len(list((out / "curves").glob("*.csv"))) == sum(1 for r in metrics if r["ci"] != "")
        for name in ("aggregated_ci.csv", "adoption.csv", "patterns.csv", "thresholds.csv",
                     "transitions.csv", "validation.csv"):
            assert (out / name).exists(), name
        for stage in manifest["stages"].values():
            assert stage["status"] in ("ok", "skipped")

    def test_excluded_community(self, tmp_path):
        comms = synth_region(3, events=[120, 120, 40], process="cstr", seed=4)
        write_dataset(comms, tmp_path / "p.json", tmp_path / "e.json")
        out = tmp_path / "out"
        assert cli.main(["run", str(tmp_path / "p.json"), str(tmp_path / "e.json"),
                         "--out-dir", str(out), *SMALL]) == 0
        ids = {r["community_id"] for r in rows(out / "aggregated_ci.csv")}
        assert ids == {comms[0].id, comms[1].id}
        assert {r["community_id"] for r in rows(out / "metrics.csv")} == ids
        logged = rows(out / "validation.csv")
        assert [(r["community_id"], r["kind"], r["excluded"]) for r in logged] == \
            [(comms[2].id, "too_few_events", "true")]
        assert json.loads((out / "manifest.json").read_text())["communities"]["excluded"] == [comms[2].id]

    def test_stage_failure(self, synth_dir, tmp_path, monkeypatch):
        def boom(*args, **kwargs):
            raise RuntimeError("broken stage")
        monkeypatch.setattr(pipeline, "_anova", boom)
        out = tmp_path / "out"
        assert cli.main(["run", *inputs(synth_dir), "--out-dir", str(out), *SMALL]) == 2
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["status"] == "failed"
        assert manifest["stages"]["anova"]["status"] == "failed"
        assert (out / "metrics.csv").exists()


def test_console_entry_point(synth_dir):
    proc = subprocess.run([sys.executable, "-m", "sscontagion.cli", "validate", *inputs(synth_dir)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "communities=4" in proc.stdout
