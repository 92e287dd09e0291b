"""TOML run configuration and the command-line entry point."""
import dataclasses
import json
import math

import numpy as np
import pytest

from reebflow.cli import main
from reebflow.config import (MetricConfig, RunConfig, build_metric,
                             parse_config_string)
from reebflow.errors import ParseError, ValidationError
from reebflow.metrics import eval_metric

TAU = 2.0 * math.pi


# ---------------------------------------------------------------------------
# parsing and validation
# ---------------------------------------------------------------------------

def test_empty_config_gives_defaults():
    rc = parse_config_string("")
    assert rc.seed == 0
    assert rc.metric.family == "flat"
    assert rc.orbits.max_class == 2
    assert rc.equidist.k_stages == (2, 4, 8)
    h = rc.config_hash()
    assert len(h) == 64
    assert h == parse_config_string("").config_hash()


def test_config_hash_tracks_fields():
    a = parse_config_string("[run]\nseed = 1\n")
    b = parse_config_string("[run]\nseed = 2\n")
    assert a.config_hash() != b.config_hash()


def test_unknown_key_reports_position():
    src = "[metric]\nfamily = 'flat'\nwibble = 3\n"
    with pytest.raises(ValidationError) as err:
        parse_config_string(src)
    msg = str(err.value)
    assert "wibble" in msg
    assert "line 3" in msg


def test_bad_toml_raises_parse_error():
    with pytest.raises(ParseError):
        parse_config_string("[metric\nfamily = flat")


def test_missing_family_parameter():
    with pytest.raises(ValidationError):
        parse_config_string("[metric]\nfamily = 'conformal_torus'\n")


def test_randers_drift_bound_rejected():
    src = ("[metric]\nfamily = 'randers_torus'\n"
           "h = [[1.0, 0.0], [0.0, 1.0]]\nb = [1.1, 0.0]\n")
    with pytest.raises(ValidationError):
        parse_config_string(src)


def test_rotating_sphere_rho_bound():
    with pytest.raises(ValidationError):
        parse_config_string("[metric]\nfamily = 'rotating_sphere'\nrho = 1.2\n")


def test_asymmetric_matrix_rejected():
    src = ("[metric]\nfamily = 'riemannian_torus'\n"
           "G = [[1.0, 0.3], [0.1, 1.0]]\n")
    with pytest.raises(ValidationError):
        parse_config_string(src)


# ---------------------------------------------------------------------------
# metric construction
# ---------------------------------------------------------------------------

def test_build_stock_families():
    for family, kwargs in (
        ("flat", {}),
        ("sphere", {}),
        ("cosh_waist", {"half_width": 1.5}),
        ("rotating_sphere", {"rho": 0.3}),
    ):
        m = build_metric(MetricConfig(family=family, **kwargs))
        assert m.metric_hash()


def test_build_expression_riemannian():
    src = ("[metric]\nfamily = 'riemannian_torus'\n"
           "G = [['1 + 0.5*cos(2*pi*q1)**2', '0.0'], ['0.0', '1.0']]\n")
    rc = parse_config_string(src)
    m = build_metric(rc.metric)
    q = np.array([0.0, 0.2])
    expect = math.sqrt(1.5)
    assert abs(eval_metric(m, q, np.array([1.0, 0.0])) - expect) < 1e-12


def test_build_conformal_from_expression():
    src = ("[metric]\nfamily = 'conformal_torus'\n"
           "exponent = '0.1*sin(2*pi*q2)'\n")
    m = build_metric(parse_config_string(src).metric)
    q = np.array([0.3, 0.25])
    expect = math.exp(0.1 * math.sin(TAU * 0.25))
    assert abs(eval_metric(m, q, np.array([1.0, 0.0])) - expect) < 1e-12


def test_build_randers_drift():
    src = ("[metric]\nfamily = 'randers_torus'\n"
           "h = [[1.0, 0.0], [0.0, 1.0]]\nb = [0.3, 0.0]\n")
    m = build_metric(parse_config_string(src).metric)
    q = np.array([0.5, 0.5])
    assert abs(eval_metric(m, q, np.array([1.0, 0.0])) - 1.3) < 1e-14


# ---------------------------------------------------------------------------
# the command line
# ---------------------------------------------------------------------------

def test_cli_orbits_list(tmp_path):
    code = main(["orbits", "list", "--out-dir", str(tmp_path)])
    assert code == 0
    doc = json.loads((tmp_path / "orbits.json").read_text())
    assert len(doc["orbits"]) == 16
    expected = dataclasses.replace(RunConfig(command="orbits"),
                                   out_dir=str(tmp_path)).config_hash()
    assert doc["config_hash"] == expected
    assert doc["seed"] == 0


def test_cli_orbits_classify_flat(tmp_path):
    code = main(["orbits", "classify", "--max-class", "1",
                 "--out-dir", str(tmp_path)])
    assert code == 0
    doc = json.loads((tmp_path / "classify.json").read_text())
    assert len(doc["orbits"]) == 8
    assert all(e["class"] == "parabolic" for e in doc["orbits"])


def test_cli_unknown_orbit_exit_code(tmp_path, capsys):
    code = main(["orbits", "classify", "--orbit", "line(9,9)",
                 "--out-dir", str(tmp_path)])
    assert code == 5
    assert "error[UnknownOrbit]" in capsys.readouterr().err


def test_cli_flow_writes_csv(tmp_path):
    code = main(["flow", "--out-dir", str(tmp_path)])
    assert code == 0
    text = (tmp_path / "flow.csv").read_text()
    assert text.startswith("# config=")
    assert text.splitlines()[1] == "t,q1,q2,p1,p2"


def test_cli_bad_config_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[metric]\nfamili = 'flat'\n")
    code = main(["orbits", "list", "--config", str(cfg),
                 "--out-dir", str(tmp_path)])
    assert code == 2
    assert "error[ValidationError]" in capsys.readouterr().err


def test_cli_negative_tol_rejected(tmp_path, capsys):
    code = main(["flow", "--tol", "-1", "--out-dir", str(tmp_path)])
    assert code == 2
    capsys.readouterr()


def test_cli_check_lemma31(tmp_path):
    code = main(["check-lemma31", "--instances", "3",
                 "--out-dir", str(tmp_path)])
    assert code == 0
    lines = (tmp_path / "lemma31.csv").read_text().splitlines()
    assert lines[0].startswith("# config=")
    assert lines[1] == "instance_seed,prediction_norm,oracle_norm,relative_error"
    assert len(lines) == 5


def test_cli_equidist_deterministic(tmp_path):
    args = ["equidist", "--family", "torus", "--K", "1",
            "--out-dir", str(tmp_path)]
    assert main(args) == 0
    first = (tmp_path / "equidist.csv").read_bytes()
    assert main(args) == 0
    assert (tmp_path / "equidist.csv").read_bytes() == first
    header = first.decode().splitlines()[1]
    assert header == "metric,current,function,ratio,target,deviation"
