import json
import subprocess
import sys

import pytest

from driftforest import cli
from driftforest.errors import SolverError


def run(args, capsys):
    code = cli.main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_bubble_json(capsys):
    code, out, _ = run(["bubble", "--dim", "3", "--mesh", "16", "--format", "json"], capsys)
    assert code == 0
    rows = json.loads(out)
    assert rows[0]["label"] == "bubble" and rows[0]["meta"]["mesh"] == 16


def test_domain_error_exit_code(capsys):
    code, _, err = run(["connectivity", "--dim", "2", "--samples", "5"], capsys)
    assert code == 2 and "error" in err
    code, _, _ = run(["green-exact", "--dim", "1", "--source", "1,2,3"], capsys)
    assert code == 2
    code, _, _ = run(["green-exact", "--dim", "1", "--source", "99,0", "--box-nmax", "3"], capsys)
    assert code == 2


def test_solver_failure_exit_code(capsys, monkeypatch):
    def boom(*args, **kwargs):
        raise SolverError("did not converge", 1e-3)

    monkeypatch.setattr(cli.gr, "green_exact", boom)
    code, _, err = run(["green-exact", "--dim", "1"], capsys)
    assert code == 3 and "solver" in err


def test_green_exact_csv(capsys):
    code, out, _ = run(
        ["green-exact", "--dim", "1", "--box-nmin", "0", "--box-nmax", "2", "--box-xradius", "1", "--source", "1,0"],
        capsys,
    )
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0] == "n,x1,value" and len(lines) == 10


def test_config_merge_and_precedence(tmp_path, capsys):
    conf = tmp_path / "conf.json"
    conf.write_text(json.dumps({"dim": 3, "mesh": [16], "epsilon": [0.5], "format": "json"}))
    ns = cli.build_parser().parse_args(["bubble", "--config", str(conf), "--dim", "2"])
    opts = cli.resolve_options("bubble", ns)
    assert opts["dim"] == 2
    assert opts["mesh"] == [16] and opts["format"] == "json"
    assert opts["seed"] == 0
    code, out, _ = run(["bubble", "--config", str(conf)], capsys)
    assert code == 0 and json.loads(out)[0]["meta"]["d"] == 3


def test_config_unknown_key(tmp_path, capsys):
    conf = tmp_path / "conf.json"
    conf.write_text(json.dumps({"dimension": 3}))
    code, _, err = run(["bubble", "--config", str(conf)], capsys)
    assert code == 2 and "dimension" in err
    conf.write_text("{not json")
    assert run(["bubble", "--config", str(conf)], capsys)[0] == 2


def test_out_writes_table_and_figure(tmp_path, capsys):
    out = tmp_path / "green.csv"
    code, stdout, _ = run(
        ["green-mc", "--dim", "1", "--samples", "50", "--horizon", "200", "--target", "1,0", "--target", "3,0",
         "--out", str(out)],
        capsys,
    )
    assert code == 0 and stdout == ""
    assert out.read_text().startswith("label,value,std_error")
    assert (tmp_path / "green.png").stat().st_size > 0


def test_no_figure(tmp_path, capsys):
    out = tmp_path / "b.json"
    code, _, _ = run(["bubble", "--mesh", "8", "--format", "json", "--out", str(out), "--no-figure"], capsys)
    assert code == 0 and out.exists()
    assert not (tmp_path / "b.png").exists()


def test_forest_commands(tmp_path, capsys):
    text = tmp_path / "forest.txt"
    code, out, _ = run(["ust", "--box-nmax", "2", "--box-xradius", "1", "--forest-text", str(text)], capsys)
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0] == "vertex,parent" and len(lines) == 1 + 9
    assert text.read_text().strip()
    out_png = tmp_path / "wsf.json"
    code, _, _ = run(["wsf", "--box-nmin", "0", "--box-nmax", "1", "--box-xradius", "1", "--horizon", "200",
                      "--format", "json", "--out", str(out_png)], capsys)
    assert code == 0
    assert len(json.loads(out_png.read_text())) >= 6
    assert (tmp_path / "wsf.png").exists()


def test_experiment_commands(capsys):
    code, out, _ = run(["intersections", "--dim", "1", "--samples", "20", "--horizons", "10", "--horizons", "100"],
                       capsys)
    assert code == 0 and len(out.strip().splitlines()) == 3
    code, out, _ = run(["connectivity", "--samples", "20", "--horizon", "500", "--eta", "2"], capsys)
    assert code == 0 and "second_moment_holds" in out
    code, out, _ = run(["crossings", "--samples", "10", "--horizon", "5000", "--p", "1", "--p", "2"], capsys)
    assert code == 0 and "fit_a" in out
    code, out, _ = run(["spread", "--samples", "10", "--horizon", "200", "--vertex", "0,0,0,0",
                        "--vertex", "0,2,0,0"], capsys)
    assert code == 0
    code, out, _ = run(["separation", "--samples", "3", "--horizon", "200", "--box-nmin", "-1", "--box-nmax", "1",
                        "--box-xradius", "1"], capsys)
    assert code == 0 and len(out.strip().splitlines()) == 3
    code, out, _ = run(["one-end", "--samples", "5", "--horizon", "500", "--box-nmin", "-4", "--box-nmax", "4",
                        "--box-xradius", "4", "--p", "2", "--p", "9"], capsys)
    assert code == 0 and "True" in out


def test_module_entry_point():
    res = subprocess.run(
        [sys.executable, "-m", "driftforest", "bubble", "--mesh", "8"], capture_output=True, text=True, timeout=300
    )
    assert res.returncode == 0 and res.stdout.startswith("label,value")
    res = subprocess.run([sys.executable, "-m", "driftforest", "bubble", "--mesh", "7"], capture_output=True, text=True)
    assert res.returncode == 2


@pytest.mark.parametrize("command", cli.COMMANDS)
def test_every_command_has_help(command, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main([command, "--help"])
    assert exc.value.code == 0
    assert "--box-nmin" in capsys.readouterr().out
