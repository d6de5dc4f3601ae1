import numpy as np
import yaml

from rsbeam.cli import main
from rsbeam.model import SystemDims, load_channels
from rsbeam.channel import generate_channels


def _cfg(tmp_path, **extra):
    d = {"dims": "1-2-2-1", "snr_grid_db": [0, 10], "n_trials": 1, "algorithms": ["no_rs", "tdm"],
         "rs_config": {"restarts": 1}, "sdr_config": {"n_randomizations": 20},
         "output_path": str(tmp_path / "r.csv")}
    d.update(extra)
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(d))
    return path


def test_gen_channels(tmp_path):
    out = tmp_path / "h.csv"
    assert main(["gen-channels", "--dims", "2-2-2-2", "--seed", "42", "--out", str(out)]) == 0
    dims, ch = load_channels(out)
    assert dims == SystemDims.from_label("2-2-2-2")
    assert np.array_equal(ch.h, generate_channels(dims, 42).h)


def test_run_and_dof(tmp_path, capsys):
    cfg = _cfg(tmp_path)
    assert main(["run", "--config", str(cfg), "--quiet"]) == 0
    assert len((tmp_path / "r.csv").read_text().splitlines()) == 5
    assert main(["sweep", "--config", str(cfg), "--quiet", "--out", str(tmp_path / "s.csv")]) == 0
    assert (tmp_path / "s.summary.csv").exists()
    assert main(["dof", "--config", str(cfg), "--results", str(tmp_path / "r.csv")]) == 0
    out = capsys.readouterr().out
    assert "classic DoF per subcarrier = 1" in out
    assert "RS DoF with 1 degraded group(s) = 0.5" in out


def test_seed_override_changes_channels(tmp_path):
    cfg = _cfg(tmp_path, algorithms=["tdm"])
    main(["run", "--config", str(cfg), "--quiet", "--out", str(tmp_path / "a.csv")])
    main(["run", "--config", str(cfg), "--quiet", "--out", str(tmp_path / "b.csv"), "--seed", "5"])
    assert (tmp_path / "a.csv").read_bytes() != (tmp_path / "b.csv").read_bytes()


def test_config_error_exit_code(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("dims: 2-2-2-2\nsnr_grid_db: [5, 0]\n")
    assert main(["run", "--config", str(bad)]) == 1
    assert main(["run", "--config", str(tmp_path / "missing.yaml")]) == 1
    assert main(["dof", "--config", str(_cfg(tmp_path)), "--results", str(tmp_path / "nope.csv")]) == 1


def test_partial_failure_exit_code(tmp_path, monkeypatch):
    from rsbeam import harness

    def boom(*a, **k):
        raise RuntimeError("x")
    monkeypatch.setattr(harness.baselines, "tdm_mmf", boom)
    assert main(["run", "--config", str(_cfg(tmp_path)), "--quiet"]) == 2


def test_dump_conic(tmp_path):
    out = tmp_path / "p.txt"
    assert main(["dump-conic", "--dims", "2-2-2-2", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "# variables 35"
    assert sum(1 for line in lines if line.startswith("[rs:total power")) == 1
