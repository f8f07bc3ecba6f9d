import csv
import io
import math
import os

import numpy as np
import pytest
import yaml

from cdma_otfs import cli
from cdma_otfs.config import PRESETS, apply_overrides, load_runs, parse_ebno, resolve
from cdma_otfs.crb import CrbInputs, crb_range, crb_velocity
from cdma_otfs.errors import ConfigError
from cdma_otfs.frame import Scheme
from cdma_otfs.sequences import Family

SMALL = ["M=8", "N=8", "max_bits=3000", "min_bit_errors=50", "ebno_db=0,10"]


def run(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


# --- config ---------------------------------------------------------------------

def test_presets_carry_table_values():
    t3, t4 = PRESETS["table3"], PRESETS["table4"]
    assert t3["grid"] == {"M": 64, "N": 64, "delta_f": 120e3, "f_c": 40e9}
    assert t3["comm"] == {"P_com": 3, "L_com": 3, "kappa_com_db": 0.0, "V_com": 200.0}
    assert t3["sweep"]["min_bit_errors"] == 600 and t3["sweep"]["max_bits"] == 10_000_000
    assert t4["sen"]["kappa_sen_db"] == 10.0 and len(t4["sen"]["targets"]) == 1
    assert t4["sweep"]["frames"] == 4000
    clutter = PRESETS["table4_clutter"]["sen"]
    assert clutter["P_n"] == 7 and clutter["targets"][0]["R"] == 200.0


def test_ebno_grammar():
    assert parse_ebno("0:4:2") == (0.0, 2.0, 4.0)
    assert parse_ebno("-2:0:1,inf") == (-2.0, -1.0, 0.0, math.inf)
    assert parse_ebno([1, "inf"]) == (1.0, math.inf)


def test_table3_enumeration():
    runs = load_runs("ber", preset="table3", overrides=["M=16", "N=16", "max_bits=2e5"])
    assert len(runs) == 6
    names = [r.name for r in runs]
    assert len(set(names)) == 6
    assert {r.config.plan.scheme for r in runs} == {Scheme.DELAY, Scheme.PURE_OTFS}
    assert runs[0].config.max_bits == 200_000
    assert runs[0].config.grid.M == 16
    assert math.isclose(runs[0].config.comm.kappa_com, 1.0)
    # the three baselines are the same computation
    assert len({r.config for r in runs if r.config.plan.scheme is Scheme.PURE_OTFS}) == 1


def test_overrides_dotted_and_target_keys():
    runs = load_runs("rmse", preset="table4", overrides=["grid.M=16", "N=16", "R=200", "V=110",
                                                          "P_n=7", "N_ML=1", "runs=otfs,dl:zc"])
    cfg = runs[0].config
    assert cfg.sen.targets[0].R == 200.0 and cfg.sen.targets[0].V == 110.0
    assert cfg.sen.P_n == 7 and cfg.N_ML == 1
    assert [r.config.plan.family for r in runs] == [None, Family.ZADOFF_CHU]


def test_every_bad_field_reported_at_once():
    raw = {"grid": {"M": 1, "N": "x"}, "comm": {"P_com": 0}, "sweep": {"ebno_db": "5,1", "frames": -1},
           "runs": [{"scheme": "nope"}, {"scheme": "DL", "family": "Had", "n_mult": 100}],
           "extra": {}}
    with pytest.raises(ConfigError) as info:
        resolve(raw, "ber")
    text = "\n".join(info.value.problems)
    for needle in ("grid.N", "M must be", "comm", "strictly increasing", "frames",
                   "unknown scheme", "extra"):
        assert needle in text, needle


def test_capacity_problem_names_the_limit():
    with pytest.raises(ConfigError, match=r"outside \[1, 8\]"):
        load_runs("ber", preset="table3", overrides=["M=8", "N=8", "runs=DL:zc:9"])


def test_unknown_override_key():
    _, problems = apply_overrides({}, ["bogus=1", "noequals"])
    assert len(problems) == 2


def test_target_outside_grid_is_config_error():
    with pytest.raises(ConfigError, match="outside"):
        load_runs("rmse", preset="table4", overrides=["M=8", "N=8", "R=5000"])


def test_yaml_file_merges_over_preset(tmp_path):
    path = tmp_path / "exp.yaml"
    path.write_text(yaml.safe_dump({"grid": {"M": 8, "N": 8},
                                    "runs": [{"scheme": "DelayDopplerCDMA", "family": "Hadamard",
                                              "n_mult": 16}]}))
    runs = load_runs("ber", path=str(path), preset="table3")
    assert len(runs) == 1
    assert runs[0].config.plan.n_mult == 16
    assert runs[0].config.comm is not None


# --- commands ---------------------------------------------------------------------

def test_ber_writes_six_files_and_reruns_identically(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    code, out, _ = run(["ber", "--preset", "table3", "--out", str(a), "--override", *SMALL], capsys)
    assert code == 0
    csvs = sorted(p.name for p in a.glob("*.csv"))
    assert len(csvs) == 6
    code, _, _ = run(["ber", "--preset", "table3", "--out", str(b), "--workers", "2",
                      "--override", *SMALL], capsys)
    assert code == 0
    for name in csvs:
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_unknown_scheme_exit_code(tmp_path, capsys):
    out_dir = tmp_path / "never"
    code, _, err = run(["ber", "--preset", "table3", "--out", str(out_dir),
                        "--override", "runs=warp"], capsys)
    assert code == 2
    assert "unknown scheme" in err
    assert not out_dir.exists()


def test_numeric_failure_exit_code(tmp_path, capsys, monkeypatch):
    from cdma_otfs import montecarlo
    from cdma_otfs.errors import NumericFailure

    def boom(*a, **k):
        raise NumericFailure("singular")
    monkeypatch.setattr(montecarlo, "mmse_matrix", boom)
    code, _, err = run(["ber", "--preset", "table3", "--out", str(tmp_path / "o"),
                        "--override", *SMALL], capsys)
    assert code == 3
    assert "numeric failure" in err
    assert not list((tmp_path / "o").glob("*.csv"))


def test_missing_output_dir_created_and_unwritable_reported(tmp_path, capsys):
    nested = tmp_path / "x" / "y"
    code, _, _ = run(["rmse", "--preset", "table4", "--out", str(nested), "--override",
                      "M=8", "N=8", "frames=3", "ebno_db=0", "runs=otfs"], capsys)
    assert code == 0 and nested.is_dir()
    blocker = tmp_path / "file"
    blocker.write_text("")
    code, _, err = run(["rmse", "--preset", "table4", "--out", str(blocker / "sub"), "--override",
                        "M=8", "N=8", "frames=3", "ebno_db=0", "runs=otfs"], capsys)
    assert code == 2 and "output" in err


def test_rmse_floor_improves_with_refinement(tmp_path, capsys):
    floors = {}
    for n_ml in (1, 4):
        out = tmp_path / f"n{n_ml}"
        code, _, _ = run(["rmse", "--preset", "table4", "--out", str(out), "--override", "M=16",
                          "N=16", "frames=100", "ebno_db=inf", "runs=otfs", f"N_ML={n_ml}"], capsys)
        assert code == 0
        rows = list(csv.DictReader(open(next(out.glob("*.csv")))))
        floors[n_ml] = float(rows[-1]["rmse_range_m"])
    assert floors[4] < floors[1]


def test_clutter_preset_runs(tmp_path, capsys):
    code, out, _ = run(["rmse", "--preset", "table4_clutter", "--out", str(tmp_path), "--override",
                        "M=16", "N=16", "frames=10", "ebno_db=0,inf", "runs=otfs,dd:zc"], capsys)
    assert code == 0
    assert len(out.split()) == 2


def test_crb_table_matches_functions(capsys):
    code, out, _ = run(["crb", "--preset", "table4", "--override", "M=16", "N=16",
                        "ebno_db=-10:10:5"], capsys)
    assert code == 0
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == ["ebno_db", "crb_range_m", "crb_velocity_mps"]
    body = np.array(rows[1:], dtype=float)
    assert np.all(np.diff(body[:, 1]) < 0) and np.all(np.diff(body[:, 2]) < 0)
    cfg = load_runs("rmse", preset="table4", overrides=["M=16", "N=16", "ebno_db=-10:10:5"])[0].config
    alpha_los = 10 / 11 * (299_792_458.0**2 / ((4 * math.pi) ** 3 * 40e9**2 * 500.0**4))
    for ebno, r, v in body:
        N0 = alpha_los / (2 * 10 ** (ebno / 10))
        inputs = CrbInputs(N0, 1.0, alpha_los, cfg.grid)
        assert math.isclose(r, crb_range(inputs), rel_tol=1e-12)
        assert math.isclose(v, crb_velocity(inputs), rel_tol=1e-12)


def test_dump_seq(tmp_path, capsys):
    code, out, _ = run(["dump-seq", "--family", "Gold", "--length", "16", "--n-mult", "3",
                        "--out", str(tmp_path)], capsys)
    assert code == 0
    lines = open(out.strip()).read().splitlines()
    assert lines[0] == "Gold_0,Gold_1,Gold_2" and len(lines) == 17
    code, _, err = run(["dump-seq", "--family", "Hadamard", "--length", "16", "--n-mult", "17",
                        "--out", str(tmp_path)], capsys)
    assert code == 2 and "16" in err


def test_dump_imaging_peak_at_target(tmp_path, capsys):
    code, out, _ = run(["dump-imaging", "--preset", "table4", "--out", str(tmp_path), "--override",
                        "M=16", "N=16", "ebno_db=inf", "runs=otfs"], capsys)
    assert code == 0
    surf = np.loadtxt(out.strip(), delimiter=",")
    assert surf.shape == (16, 16)
    # 500 m and 200 m/s sit near delay 6.4 and Doppler 7.1 on this grid
    tau, nu = np.unravel_index(np.argmax(surf), surf.shape)
    assert tau in (6, 7) and nu in (7, 8)
    assert not [p for p in os.listdir(tmp_path) if p.endswith(".part")]
