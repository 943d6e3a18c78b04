import json

import numpy as np
import pytest

from slod import io
from slod.cli import SCENARIOS, ConfigError, main, validate_config


def test_defaults():
    cfg = validate_config(None)
    assert (cfg.scenario, cfg.kappa, cfg.coarse, cfg.ell, cfg.fine, cfg.seed) == (
        "spectrum",
        32.0,
        [32],
        [1, 2, 3],
        256,
        0,
    )
    assert cfg.warnings == []
    loc = validate_config({"scenario": "localization"})
    assert (loc.kappa, loc.coarse, loc.source["kind"]) == (16.0, [16], "constant")


@pytest.mark.parametrize(
    "raw",
    [
        "fine: 96\ncoarse: [10]\n",
        "bogus: 1\n",
        "scenario: nope\n",
        "coarse: [16]\nell: [8]\n",
        "scenario: adaptive\nadaptive_tol: null\n",
        "scenario: pml\ncoarse: [8]\n",
        "dim: 3\n",
        "scenario: pml\ndim: 1\n",
        "kappa: -1\n",
        "source: {kind: constant, colour: red}\n",
        "- a\n- b\n",
        "coarse: [x]\n",
    ],
)
def test_invalid_configs(raw):
    with pytest.raises(ConfigError):
        validate_config(raw)


def test_resolution_warning():
    assert validate_config({"kappa": 32, "coarse": [16], "fine": 64}).warnings == []
    w = validate_config({"kappa": 32, "coarse": [8], "fine": 64}).warnings
    assert len(w) == 1 and "pi/sqrt(2)" in w[0]


def test_overrides_beat_config():
    cfg = validate_config("kappa: 4\ncoarse: [8]\nell: [1]\n", {"kappa": 6.0, "coarse": "4,8", "seed": None})
    assert cfg.kappa == 6.0 and cfg.coarse == [4, 8] and cfg.seed == 0


def test_list_scenarios(capsys):
    assert main(["--list-scenarios"]) == 0
    out = capsys.readouterr().out
    for name in SCENARIOS:
        assert name in out


def test_bad_config_exit_code(tmp_path, capsys):
    assert main(["run", "--fine", "96", "--coarse", "10", "--out", str(tmp_path)]) == 2
    assert "not divisible" in capsys.readouterr().err


def test_empty_config_runs_spectrum(tmp_path):
    cfg = tmp_path / "empty.yaml"
    cfg.write_text("")
    out = tmp_path / "o"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    rows = io.read_csv(out / "spectrum.csv")
    assert {int(r["ell"]) for r in rows} == {1, 2, 3}
    res = io.read_csv(out / "results.csv")
    sig = [float(r["sigma_min"]) for r in res]
    assert sig[0] > sig[1] > sig[2]
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["scenario"] == "spectrum"
    assert (out / "patch_orders.csv").exists()


def test_csv_outputs_are_bitwise_reproducible(tmp_path):
    args = ["run", "--scenario", "localization", "--kappa", "8", "--coarse", "8", "--fine", "32", "--ell", "1,2"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("results.csv",):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_1d_spectrum(tmp_path):
    out = tmp_path / "s1"
    assert main(["run", "--dim", "1", "--kappa", "8", "--coarse", "16", "--fine", "256", "--out", str(out)]) == 0
    rows = [r for r in io.read_csv(out / "spectrum.csv") if int(r["ell"]) == 1]
    s = np.array([float(r["sigma"]) for r in rows])
    assert np.all(s[2:] < 1e-10)
    assert list(out.glob("basis_*.fld"))


def test_adaptive_and_single_runs(tmp_path):
    out = tmp_path / "ad"
    assert main(["run", "--scenario", "adaptive", "--kappa", "8", "--coarse", "8", "--fine", "32",
                 "--adaptive-tol", "1e-4", "--out", str(out)]) == 0
    orders = io.read_csv(out / "ell_map.csv")
    assert len(orders) == 64
    man = json.loads((out / "manifest.json").read_text())
    assert any("capped at 3" in w for w in man["warnings"])
    out = tmp_path / "pml"
    assert main(["run", "--scenario", "pml", "--kappa", "8", "--coarse", "16", "--fine", "64",
                 "--ell", "1", "--out", str(out)]) == 0
    f = io.read_field(out / "slod.fld")
    assert f.n_fine == 64 and f.kappa == 8.0
    assert io.read_field(out / "reference.fld").values.shape == f.values.shape
