import numpy as np
import pytest

from motsolve.cli import ConfigError, main, parse_config, parse_target, run


def test_defaults_filled():
    cfg = parse_config("command = solve\ncase = identity\nh = 0.125")
    assert cfg.command == "solve" and cfg.h == 0.125
    assert cfg.N == 5 and cfg.alpha == 0.5 and cfg.tol == 1e-8 and cfg.max_iter == 1_000_000
    assert cfg.h_list == (0.125, 0.0625, 0.03125)


def test_alpha_range_error():
    with pytest.raises(ConfigError, match=r"line 1: alpha out of range \(0,1\]"):
        parse_config("alpha = 1.5")


def test_h_list_and_fractions():
    cfg = parse_config("command = study\nh_list = 0.125,0.0625")
    assert cfg.h_list == (0.125, 0.0625)
    assert parse_config("h = 1/16  # comment").h == 0.0625


@pytest.mark.parametrize("text, msg", [
    ("colour = red", "line 1: unknown key 'colour'"),
    ("\n\nN = two", "line 3: malformed value for 'N'"),
    ("N = 1", "line 1: N must be >= 2"),
    ("h_list = 0.1,0.2", "decreasing"),
    ("just words", "line 1: expected"),
    ("case = banana", "unknown case"),
])
def test_errors_name_key_and_line(text, msg):
    with pytest.raises(ConfigError, match=msg):
        parse_config(text)


def test_parse_target():
    assert parse_target("rectangle: -1,1,-2,2").R_max == pytest.approx(np.hypot(1, 2))
    assert parse_target("disc: 0,0,2").is_disc
    assert len(parse_target("polygon: 0 0; 1 0; 0 1").vertices) == 3
    with pytest.raises(ConfigError):
        parse_target("blob: 1")


def test_solve_writes_files(tmp_path):
    out = tmp_path / "run"
    cfg = parse_config(f"command = solve\ncase = identity\nh = 0.125\noutput = {out}")
    assert run(cfg) == 0
    assert (out / "solution.csv").exists() and (out / "report.txt").exists()
    header = (out / "solution.csv").read_text().splitlines()[0]
    assert header == "node,x,y,u,T1,T2"
    first = (out / "solution.csv").read_bytes()
    assert run(cfg) == 0
    assert (out / "solution.csv").read_bytes() == first


def test_demo1d_command(tmp_path):
    cfg = parse_config(f"command = demo1d\nwhich = Ex1\noutput = {tmp_path}")
    assert run(cfg) == 0
    assert (tmp_path / "u.dat").exists() and (tmp_path / "v.dat").exists()
    assert "max_u_minus_v = 2.3333333333333" in (tmp_path / "report.txt").read_text()


def test_verify_command(tmp_path):
    cfg = parse_config(f"command = verify\ncase = identity\nh = 0.125\ntrials = 2\nseed = 42\noutput = {tmp_path}")
    assert run(cfg) == 0
    rows = (tmp_path / "verify.csv").read_text().splitlines()
    assert rows[0] == "trial,min_slack,max_slack,violations"
    assert len(rows) == 3 and all(r.endswith(",0") for r in rows[1:])


def test_custom_densities(tmp_path):
    xs = np.linspace(-1, 1, 5)
    lines = ["x,y,value"] + [f"{a},{b},1" for a in xs for b in xs]
    (tmp_path / "f.csv").write_text("\n".join(lines))
    (tmp_path / "g.csv").write_text("\n".join(lines))
    cfg = parse_config(
        f"command = solve\nh = 0.25\nf_grid = {tmp_path / 'f.csv'}\ng_grid = {tmp_path / 'g.csv'}\n"
        f"L_f = 0\nL_g = 0\ntarget = rectangle: -1,1,-1,1\noutput = {tmp_path / 'o'}")
    assert run(cfg) == 0


def test_custom_densities_need_constants():
    with pytest.raises(ConfigError, match="L_f"):
        parse_config("f_grid = a.csv\ng_grid = b.csv\ntarget = disc: 0,0,1")


def test_main_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("alpha = 2")
    assert main([str(bad)]) == 2
    assert "alpha out of range" in capsys.readouterr().err
    assert main([str(tmp_path / "missing.cfg")]) == 2
    good = tmp_path / "good.cfg"
    good.write_text(f"command = demo1d\nwhich = Ex2\noutput = {tmp_path / 'd'}\n")
    assert main([str(good)]) == 0


def test_threads_env(tmp_path, monkeypatch):
    monkeypatch.setenv("MOTSOLVE_THREADS", "x")
    cfg = parse_config(f"command = demo1d\noutput = {tmp_path}")
    with pytest.raises(ConfigError, match="MOTSOLVE_THREADS"):
        run(cfg)
