import json

import pytest

from pimsolve.config import DEFAULTS, SCHEMA, load_config
from pimsolve.errors import ParseError


def test_defaults_validate_and_resolve():
    cfg = load_config()
    assert cfg.resolved() == DEFAULTS
    assert cfg.quant.q_a == 16 and cfg.arch.s == 256 and cfg.params.beta == 0.1
    assert len(cfg.workload) == 7
    assert SCHEMA["additionalProperties"] is False


def test_file_and_overrides(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"quant": {"q_x": 12}, "workload": [{"kind": "fc", "c_in": 8, "c_out": 4}]}))
    cfg = load_config(str(p), {"seed": 9, "block_size": 4})
    assert cfg.quant.q_x == 12 and cfg.quant.q_a == 16
    assert cfg.seed == 9
    layer = cfg.workload[0]
    assert layer.a_dim == 8 and layer.a_blocks == [4, 4]


@pytest.mark.parametrize("doc", [
    {"nope": 1},
    {"quant": {"q_a": 0}},
    {"quant": {"bits": 16}},
    {"workload": "alexnet"},
    {"workload": [{"kind": "fc", "c_in": 8}]},
    {"demo": {"bits": [10]}},
    {"quant": {"q_a": 4}},  # violates k r_c <= q_a
])
def test_rejects_invalid(tmp_path, doc):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(doc))
    with pytest.raises(ParseError):
        load_config(str(p))


def test_malformed_json_reports_line(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{\n  "seed": 1,\n  oops\n}')
    with pytest.raises(ParseError) as exc:
        load_config(str(p))
    assert exc.value.line == 3


def test_missing_file():
    with pytest.raises(ParseError):
        load_config("/nonexistent/cfg.json")
