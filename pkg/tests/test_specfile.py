import pytest

from sparsemf import specfile


def test_parse_scalars_lists_comments():
    text = """
# experiment header
schema_version = 1
kind = sigma_sweep
L = 200          # rows
sigma = 0.01, 0.05, 0.1
flag = true
name = demo
"""
    out = specfile.loads(text)
    assert out["kind"] == "sigma_sweep"
    assert out["L"] == 200
    assert out["sigma"] == [0.01, 0.05, 0.1]
    assert out["flag"] is True
    assert out["name"] == "demo"


def test_schema_version_required():
    with pytest.raises(ValueError, match="schema_version"):
        specfile.loads("kind = single_run\n")


def test_duplicate_key_rejected():
    with pytest.raises(ValueError, match="duplicate"):
        specfile.loads("schema_version = 1\nx = 1\nx = 2\n")


def test_garbage_line_rejected():
    with pytest.raises(ValueError, match="key = value"):
        specfile.loads("schema_version = 1\nnot a pair\n")


def test_roundtrip():
    values = {"kind": "rho_h_sweep", "L": 10, "rho": [0.1, 0.2],
              "noiseless": True, "epsilon": 0.125}
    text = specfile.dumps(values)
    back = specfile.loads(text)
    back.pop("schema_version")
    assert back == values


def test_load_file(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text("schema_version = 1\nseed = 9\n")
    assert specfile.load(path) == {"schema_version": 1, "seed": 9}
