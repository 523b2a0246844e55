import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bsdsim import cli
from bsdsim.config import SCHEMA, RunConfig, parse_elongation_map, parse_profile
from bsdsim.errors import ConfigError
from bsdsim.replay import ElongationMap


def run(tmp_path, *argv, out="out"):
    d = tmp_path / out
    return cli.main([*argv, "--out", str(d)]), d


class TestConfig:
    def test_defaults_round_trip(self):
        cfg = RunConfig()
        assert RunConfig.from_ini(cfg.to_ini()) == cfg

    @settings(max_examples=50)
    @given(st.data())
    def test_round_trip_random_values(self, data):
        cfg = RunConfig()
        for section, keys in SCHEMA.items():
            for key, (typ, _) in keys.items():
                if typ is float:
                    v = data.draw(st.floats(allow_nan=False, allow_infinity=False))
                elif typ is int:
                    v = data.draw(st.integers(-10**6, 10**6))
                elif typ is bool:
                    v = data.draw(st.booleans())
                else:
                    v = data.draw(st.text(st.characters(min_codepoint=48, max_codepoint=122), max_size=12))
                cfg.set(section, key, v)
        assert RunConfig.from_ini(cfg.to_ini()) == cfg

    def test_manifest_section_ignored(self):
        cfg = RunConfig()
        cfg.set("bench", "profile", "engaged-at-75mm")
        text = cfg.to_ini({"command": "bench", "version_numpy": np.__version__})
        assert "[manifest]" in text
        assert RunConfig.from_ini(text) == cfg

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            RunConfig.from_ini("[device]\nk_unknown = 1\n")
        with pytest.raises(ConfigError):
            RunConfig().set("device", "nope", 1.0)

    def test_unknown_section(self):
        with pytest.raises(ConfigError):
            RunConfig.from_ini("[plotting]\ndpi = 300\n")

    def test_bad_value(self):
        with pytest.raises(ConfigError, match="controller"):
            RunConfig.from_ini("[controller]\ndwell = ten\n")

    def test_optional_key_empty(self):
        cfg = RunConfig.from_ini("[bench]\ndeflate_target_psig =\n")
        assert cfg["bench"]["deflate_target_psig"] is None

    def test_builders(self):
        cfg = RunConfig()
        cfg.set("device", "loss_factor", "0.1")
        cfg.set("controller", "rom_max_deg", "80")
        assert cfg.device().loss_factor == 0.1
        assert cfg.controller().rom_max == 80.0
        assert cfg.bench().clutch_engage_at == "never"

    def test_invalid_device_value(self):
        cfg = RunConfig()
        cfg.set("device", "exhaust_cd", "-1")
        with pytest.raises(ConfigError):
            cfg.device()

    @pytest.mark.parametrize("text, value", [("never", "never"), ("always", "always"),
                                             ("engaged-at-75mm", 75.0), ("60", 60.0)])
    def test_parse_profile(self, text, value):
        assert parse_profile(text) == value

    def test_parse_profile_bad(self):
        with pytest.raises(ConfigError):
            parse_profile("sometimes")

    def test_parse_elongation_map(self):
        assert parse_elongation_map("linear") is None
        assert parse_elongation_map("0:0, 45:30, 90:110") == ElongationMap((0.0, 45.0, 90.0), (0.0, 30.0, 110.0))
        with pytest.raises(ConfigError):
            parse_elongation_map("0-0,90-110")


class TestCommands:
    def test_bench_engaged_at_75(self, tmp_path, capsys):
        code, out = run(tmp_path, "bench", "--profile", "engaged-at-75mm")
        assert code == 0
        df = pd.read_csv(out / "bench.csv")
        assert {"t_s", "elongation_mm", "force_N", "clutch"} <= set(df.columns)
        assert "slope change at" in capsys.readouterr().out
        man = RunConfig.load(out / "manifest.ini")
        assert man["bench"]["profile"] == "engaged-at-75mm"

    def test_dynamic(self, tmp_path):
        code, out = run(tmp_path, "dynamic", "--deflate-target", "15")
        assert code == 0
        assert pd.read_csv(out / "dynamic.csv")["force_N"].max() > 0

    def test_deflate(self, tmp_path):
        code, out = run(tmp_path, "deflate", "--from", "50", "--to", "0", "--elongation", "110", "--duration", "2")
        assert code == 0
        df = pd.read_csv(out / "deflate.csv")
        assert df["pressure_psig"].iloc[0] == pytest.approx(50.0)
        assert np.all(np.diff(df["pressure_psig"]) <= 0)

    def test_calibrate(self, tmp_path):
        code, out = run(tmp_path, "calibrate", "--duration", "0.8")
        assert code == 0
        cal = pd.read_csv(out / "calibration.csv").iloc[0]
        assert cal["duration_s"] == pytest.approx(0.8, rel=1e-3)
        cfg = RunConfig.load(out / "calibrated.ini")
        assert cfg["device"]["exhaust_cd"] * cfg["device"]["exhaust_area_m2"] == pytest.approx(cal["CdA_m2"])

    def test_optimize_lifting(self, tmp_path):
        code, out = run(tmp_path, "optimize", "--phase", "lifting")
        assert code == 0
        prof = pd.read_csv(out / "profile_lifting.csv")
        assert list(prof.columns) == ["percent_rom", "F_total_N", "F_passive_N", "F_active_N"]
        assert len(prof) == 101

    def test_synth_train_classify_replay(self, tmp_path):
        code, data = run(tmp_path, "synth", "--n-trials", "2", "--seed", "3", out="data")
        assert code == 0
        idx = pd.read_csv(data / "index.csv")
        assert len(idx) == 6
        code, mdir = run(tmp_path, "train", "--data", str(data),
                         "--set", "forest.n_trees=5", "--set", "forest.stride=10", out="models")
        assert code == 0
        assert (mdir / "state.json").exists() and (mdir / "weight.json").exists()
        trace = str(data / idx["file"].iloc[0])
        code, cdir = run(tmp_path, "classify", "--model", str(mdir / "state.json"), "--trace", trace, out="cls")
        assert code == 0
        assert len(pd.read_csv(cdir / "labels.csv")) > 0
        code, rdir = run(tmp_path, "replay", "--trace", trace, "--models", str(mdir), out="rep")
        assert code == 0
        assert {"replay.csv", "cycles.csv", "summary.txt", "manifest.ini"} <= {p.name for p in rdir.iterdir()}

    def test_energy(self, tmp_path):
        code, b = run(tmp_path, "bench", out="b")
        assert code == 0
        code, e = run(tmp_path, "energy", "--trace", str(b / "bench.csv"), out="e")
        assert code == 0
        assert len(pd.read_csv(e / "energy.csv")) == 1


class TestExitCodes:
    def test_config_error(self, tmp_path):
        assert run(tmp_path, "bench", "--set", "bench.nope=1")[0] == 2
        assert run(tmp_path, "bench", "--profile", "sometimes")[0] == 2
        assert run(tmp_path, "train")[0] == 2

    def test_domain_error(self, tmp_path):
        assert run(tmp_path, "deflate", "--from", "10", "--to", "20")[0] == 2

    def test_infeasible(self, tmp_path, capsys):
        code, _ = run(tmp_path, "optimize", "--set", "optimize.object_mass_kg=80")
        assert code == 3
        assert "exceeds achievable" in capsys.readouterr().err

    def test_io_errors(self, tmp_path):
        assert run(tmp_path, "bench", "--config", str(tmp_path / "missing.ini"))[0] == 4
        bad = tmp_path / "bad.csv"
        bad.write_text("t,alpha\n0,1\n")
        assert run(tmp_path, "replay", "--trace", str(bad))[0] == 4


def test_rerun_from_manifest_is_identical(tmp_path):
    code, a = run(tmp_path, "bench", "--profile", "engaged-at-75mm", "--set", "device.loss_factor=0.05", out="a")
    assert code == 0
    code, b = run(tmp_path, "bench", "--config", str(a / "manifest.ini"), out="b")
    assert code == 0
    assert (a / "bench.csv").read_bytes() == (b / "bench.csv").read_bytes()
    assert (a / "manifest.ini").read_bytes() == (b / "manifest.ini").read_bytes()
