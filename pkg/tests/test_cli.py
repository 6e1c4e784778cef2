"""Exit codes and file flows of the command-line front end."""

import json

import numpy as np
import pytest

from cascadepass import files
from cascadepass.cli import (
    EXIT_CHECK_FAILED,
    EXIT_INFEASIBLE,
    EXIT_INVALID,
    EXIT_OK,
    execute,
)
from cascadepass.model import CascadeNetwork, Subsystem
from cascadepass.sample_cascades import (
    addition_blocks,
    four_stage_cascade,
    two_stage_scalar_cascade,
)


@pytest.fixture
def net_file(tmp_path):
    path = tmp_path / "net.json"
    files.save_network(two_stage_scalar_cascade(), path)
    return str(path)


@pytest.fixture
def state_file(tmp_path, net_file):
    path = tmp_path / "state.json"
    assert execute(["design", "--net", net_file, "--out", str(path)]) == EXIT_OK
    return str(path)


def test_validate_ok(net_file, capsys):
    assert execute(["validate", "--net", net_file]) == EXIT_OK
    assert "network ok" in capsys.readouterr().out


def test_validate_rejects_skip_coupling(tmp_path, capsys):
    sub = Subsystem(A=-1.0, B1=1.0, B2=1.0, B3=1.0, C=1.0)
    net = CascadeNetwork.from_blocks([sub, sub, sub], {(1, 3): [[1.0]]})
    path = tmp_path / "skip.json"
    files.save_network(net, path)
    assert execute(["validate", "--net", str(path)]) == EXIT_INVALID
    assert "NonCascadeCoupling" in capsys.readouterr().err


def test_missing_file_is_invalid(tmp_path, capsys):
    assert execute(["validate", "--net", str(tmp_path / "absent.json")]) == EXIT_INVALID
    assert "cannot read" in capsys.readouterr().err


def test_malformed_file_is_invalid(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text("{]")
    assert execute(["validate", "--net", str(path)]) == EXIT_INVALID
    assert "malformed" in capsys.readouterr().err


def test_design_writes_state(net_file, tmp_path, capsys):
    out = tmp_path / "designed.json"
    assert execute(["design", "--net", net_file, "--out", str(out)]) == EXIT_OK
    stdout = capsys.readouterr().out
    assert "step 1: route=Verified" in stdout
    assert "saved state" in stdout
    state = files.load_state(out)
    assert len(state.records) == 2


def test_design_infeasible_network(tmp_path, capsys):
    sub = Subsystem(A=1.0, B1=0.0, B2=1.0, B3=0.0, C=1.0)
    net_path = tmp_path / "stuck.json"
    files.save_network(CascadeNetwork.from_blocks([sub], {}), net_path)
    code = execute(["design", "--net", str(net_path), "--out", str(tmp_path / "o.json")])
    assert code == EXIT_INFEASIBLE
    assert "design failed at step 1" in capsys.readouterr().err


def test_check_passes_designed_state(state_file, capsys):
    assert execute(["check", "--state", state_file]) == EXIT_OK
    assert capsys.readouterr().out.startswith("pass:")


def test_check_cross_checks_network(state_file, net_file, tmp_path, capsys):
    assert execute(["check", "--state", state_file, "--net", net_file]) == EXIT_OK
    other = tmp_path / "other.json"
    files.save_network(four_stage_cascade(), other)
    assert execute(["check", "--state", state_file, "--net", str(other)]) == EXIT_INVALID
    assert "different network" in capsys.readouterr().err


def test_check_fails_on_tampered_storage(state_file, tmp_path, capsys):
    doc = json.loads(open(state_file).read())
    doc["records"][0]["Q"] = [[2.0]]
    tampered = tmp_path / "tampered.json"
    tampered.write_text(json.dumps(doc))
    assert execute(["check", "--state", str(tampered)]) == EXIT_CHECK_FAILED
    out = capsys.readouterr().out
    assert out.startswith("fail:")
    assert "EqualityResidual" in out


def test_simulate_passes_and_writes_csv(state_file, tmp_path, capsys):
    csv = tmp_path / "trace.csv"
    code = execute(["simulate", "--state", state_file, "--T", "2.0", "--csv", str(csv)])
    assert code == EXIT_OK
    stdout = capsys.readouterr().out
    assert "dissipation margin" in stdout
    header = csv.read_text().splitlines()[0]
    assert header == "t,x1,x2,y1,y2,w1,w2,V"


def test_simulate_detects_overclaimed_rate(state_file, tmp_path, capsys):
    doc = json.loads(open(state_file).read())
    for rec in doc["records"]:
        rec["epsilon"] = 5.0
    doc["global_epsilon"] = 5.0
    tampered = tmp_path / "overclaimed.json"
    tampered.write_text(json.dumps(doc))
    code = execute(["simulate", "--state", str(tampered), "--T", "2.0"])
    assert code == EXIT_CHECK_FAILED
    assert "violated" in capsys.readouterr().err


def test_simulate_seed_changes_disturbance(state_file, capsys):
    execute(["simulate", "--state", state_file, "--T", "1.0", "--seed", "0"])
    first = capsys.readouterr().out
    execute(["simulate", "--state", state_file, "--T", "1.0", "--seed", "0"])
    repeat = capsys.readouterr().out
    execute(["simulate", "--state", state_file, "--T", "1.0", "--seed", "1"])
    other = capsys.readouterr().out
    assert first == repeat
    assert first != other


def test_add_extends_designed_state(tmp_path, capsys):
    net_path = tmp_path / "three.json"
    files.save_network(four_stage_cascade(3), net_path)
    state_path = tmp_path / "three_state.json"
    assert execute(["design", "--net", str(net_path), "--out", str(state_path)]) == EXIT_OK

    new_sub, h_self, h_prev, h_to_new = addition_blocks()
    add_path = tmp_path / "fourth.json"
    files.save_addition(new_sub, h_self, h_prev, h_to_new, add_path)
    grown_path = tmp_path / "four_state.json"
    capsys.readouterr()
    code = execute(["add", "--state", str(state_path), "--sub", str(add_path),
                    "--out", str(grown_path)])
    assert code == EXIT_OK
    assert "step 4" in capsys.readouterr().out
    grown = files.load_state(grown_path)
    assert len(grown.records) == 4
    assert execute(["check", "--state", str(grown_path)]) == EXIT_OK


def test_report_summarizes_state(state_file, capsys):
    assert execute(["report", "--state", state_file]) == EXIT_OK
    out = capsys.readouterr().out
    assert "cascade of 2 subsystems" in out
    assert "routes: 2 verified, 0 synthesized" in out


def test_tol_flag_reaches_solver(net_file, tmp_path):
    out = tmp_path / "tol_state.json"
    assert execute(["design", "--net", net_file, "--tol", "1e-7",
                    "--out", str(out)]) == EXIT_OK
    assert files.load_state(out).records
