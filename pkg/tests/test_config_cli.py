import json

import pytest

from carleman_lab.cli import main
from carleman_lab.config import ParseError, ValidationError, default_config, parse_config, parse_text
from carleman_lab.io import HASH_COLUMN, fmt, read_csv, verify_provenance, write_csv
from carleman_lab.scenario import build_scenario

CONSTANT_JUMP = """
[medium]
a1 = { kind = "constant", value = 2.0 }
a2 = { kind = "constant", value = 1.0 }
alpha_lo = 1.0
alpha_hi = 2.0
"""

SWAPPED = """
[medium]
a1 = { kind = "constant", value = 1.0 }
a2 = { kind = "constant", value = 2.0 }
alpha_lo = 1.0
alpha_hi = 2.0
"""


def write(tmp_path, text, name="scenario.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_minimal_config_defaults_and_stable_hash(tmp_path):
    a = parse_config(write(tmp_path, ""))
    b = parse_text("[solver]\nn_cells = 128\n")
    assert a.to_dict() == default_config().to_dict()
    assert a.hash() == b.hash() == default_config().hash()
    c = parse_text("[output]\ndir = 'elsewhere'\n")
    assert c.hash() == a.hash()
    assert parse_text("[solver]\nn_cells = 64\n").hash() != a.hash()


def test_unknown_key_names_the_path():
    with pytest.raises(ValidationError) as exc:
        parse_text("[weights]\nbeta2 = 0.1\n")
    assert exc.value.path == "weights.beta2" and "beta2" in str(exc.value)
    with pytest.raises(ValidationError, match=r"medium\.a1: .*beta2"):
        parse_text('[medium]\na1 = { kind = "constant", value = 1.0, beta2 = 3 }\n')
    with pytest.raises(ParseError):
        parse_text("[solver\n")
    with pytest.raises(ValidationError, match="solver.n_cells"):
        parse_text("[solver]\nn_cells = 'many'\n")


def test_eps_above_two_center_bound_is_rejected_in_stability_mode(tmp_path):
    cfg = parse_text("[geometry]\neps = 0.5\n")
    sc = build_scenario(cfg)
    assert sc.notes and any("eps" in n for n in sc.notes)
    with pytest.raises(ValidationError) as exc:
        build_scenario(cfg, require_eps=True)
    assert exc.value.path == "geometry.eps"
    assert main(["stability", "--config", write(tmp_path, "[geometry]\neps = 0.5\n"),
                 "--out", str(tmp_path / "o")]) == 1


def test_admissibility_constant_jump_exits_zero(tmp_path):
    out = tmp_path / "adm"
    assert main(["admissibility", "--config", write(tmp_path, CONSTANT_JUMP), "--out", str(out)]) == 0
    meta = json.loads((out / "admissibility.meta.json").read_text())
    assert meta["admissibility"]["pass"] is True and meta["exit_status"] == 0
    header, rows = read_csv(out / "lambda.csv")
    assert header == [HASH_COLUMN, "theta", "lambda"]
    assert {r[2] for r in rows} == {"2.0"}


def test_weights_on_jump_violation_exits_two(tmp_path, capsys):
    out = tmp_path / "w"
    assert main(["weights", "--config", write(tmp_path, SWAPPED), "--out", str(out)]) == 2
    assert "gamma interval empty" in capsys.readouterr().err
    meta = json.loads((out / "weights.meta.json").read_text())
    assert meta["exit_status"] == 2 and "gamma interval empty" in meta["failure"]


def test_operational_errors_exit_one(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "missing.toml"), "--out", str(tmp_path)]) == 1
    assert main(["solve", "--config", write(tmp_path, "[solver]\ncfl_safety = 2.0\n"),
                 "--out", str(tmp_path)]) == 1


def test_provenance_and_hash_column(tmp_path):
    h = default_config().hash()
    write_csv(tmp_path / "a.csv", ["x"], [[1.5], [float("nan")]], h)
    assert verify_provenance(tmp_path, h) == []
    write_csv(tmp_path / "b.csv", ["x"], [[1]], "0" * 64)
    problems = verify_provenance(tmp_path, h)
    assert [p[0] for p in problems] == ["b.csv"]
    assert main(["provenance", "--out", str(tmp_path)]) == 2
    assert (tmp_path / "a.csv").read_bytes().startswith(b"config_hash,x\r\n" + h.encode())


def test_number_formatting_round_trips():
    for v in (0.1, 1 / 3, 1e-300, -2.5e17):
        assert float(fmt(v)) == v
    assert fmt(True) == "true" and fmt(3) == "3" and fmt(float("inf")) == "inf"
