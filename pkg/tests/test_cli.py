import json

import numpy as np
import pytest

from urelliptic.cache import SolveCache, cache_key
from urelliptic.cli import main
from urelliptic.config import parse_config
from urelliptic.errors import ConfigInvalid
from urelliptic.pipeline import Pipeline
from urelliptic.report import line_plot, write_csv, write_json


def small_config(**over):
    cfg = {
        "name": "tiny",
        "resolution": 64,
        "fixture": {"kind": "hyperplane", "params": {"box": 1}, "depth": 3},
        "stopping": {"eps_pole": 0.2},
        "stages": ["generate", "solve", "corona", "report"],
        "checks": [{"metric": "solve.total_mass", "op": ">=", "value": 0.5}],
    }
    cfg.update(over)
    return cfg


def write_config(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return p


def run_cli(tmp_path, data, out="out", cache="cache"):
    p = write_config(tmp_path, data)
    return main(["all", "--config", str(p), "--out", str(tmp_path / out), "--cache", str(tmp_path / cache)])


def test_exit_codes(tmp_path, capsys):
    assert run_cli(tmp_path, small_config()) == 0
    failing = small_config(checks=[{"metric": "solve.total_mass", "op": ">", "value": 2.0}])
    assert run_cli(tmp_path, failing) == 2
    assert "fail" in capsys.readouterr().out
    assert run_cli(tmp_path, small_config(stopping={"delta": 1.5})) == 1
    assert "stopping.delta" in capsys.readouterr().err


def test_config_errors_name_the_field():
    with pytest.raises(ConfigInvalid, match="stopping.delta"):
        parse_config(small_config(stopping={"delta": -0.1}))
    with pytest.raises(ConfigInvalid, match="fixture.colour"):
        parse_config(small_config(fixture={"kind": "hyperplane", "colour": 1}))
    with pytest.raises(ConfigInvalid, match="resolution"):
        parse_config(small_config(resolution=100))
    with pytest.raises(ConfigInvalid, match=r"checks\[0\].op"):
        parse_config(small_config(checks=[{"metric": "x", "op": "!=", "value": 1}]))
    with pytest.raises(ConfigInvalid, match="stages"):
        parse_config(small_config(stages=["generate", "plot"]))


def test_bad_seed_and_missing_file(tmp_path):
    p = write_config(tmp_path, small_config())
    assert main(["generate", "--config", str(p), "--out", str(tmp_path / "o"), "--seed", "-1"]) == 1
    assert main(["generate", "--config", str(tmp_path / "nope.json")]) == 1


def test_determinism(tmp_path):
    assert run_cli(tmp_path, small_config(), out="a", cache="ca") == 0
    assert run_cli(tmp_path, small_config(), out="b", cache="cb") == 0
    for name in ("summary.json", "corona.csv", "boundary_set.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    s = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert s["passed"] and len(s["params_hash"]) == 16


def test_cache_hits_and_pole_change(tmp_path):
    cfg = parse_config(small_config())
    first = Pipeline(cfg, out=tmp_path / "o1", cache=tmp_path / "c")
    first.run(["solve"])
    assert first.solves > 0 and first.cache.hits == 0
    again = Pipeline(parse_config(small_config()), out=tmp_path / "o2", cache=tmp_path / "c")
    again.run(["solve"])
    assert again.solves == 0 and again.cache.misses == 0
    moved = Pipeline(parse_config(small_config(stopping={"eps_pole": 0.1})), out=tmp_path / "o3",
                     cache=tmp_path / "c")
    moved.run(["solve"])
    assert not np.allclose(moved.state["pole"], first.state["pole"])
    assert moved.cache.misses >= 1


def test_cache_keys_and_corruption(tmp_path):
    spec = {"what": {"measure_all_cells": [10, 20]}, "resolution": 64}
    shifted = {"what": {"measure_all_cells": [10, 21]}, "resolution": 64}
    assert cache_key(spec) == cache_key(json.loads(json.dumps(spec)))
    assert cache_key(spec) != cache_key(shifted)
    c = SolveCache(tmp_path)
    arr = np.arange(12.0).reshape(3, 4)
    key = c.store(spec, arr)
    assert np.array_equal(c.lookup(spec), arr) and c.hits == 1
    assert c.lookup(shifted) is None and c.misses == 1
    data = tmp_path / f"{key}.npy"
    raw = bytearray(data.read_bytes())
    raw[-1] ^= 0xFF
    data.write_bytes(bytes(raw))
    assert c.lookup(spec) is None and c.misses == 2
    calls = []
    got = c.fetch(spec, lambda: calls.append(1) or arr)
    assert calls == [1] and np.array_equal(got, arr)
    assert np.array_equal(c.lookup(spec), arr)


def test_csv_json_svg(tmp_path):
    write_csv(tmp_path / "t.csv", ["a", "b"], [[1, "x,y"], [np.float64(0.5), float("nan")]])
    raw = (tmp_path / "t.csv").read_bytes()
    assert raw == b'a,b\r\n1,"x,y"\r\n0.5,\r\n'
    write_json(tmp_path / "t.json", {"b": np.int64(2), "a": [np.float32(1.5), float("inf")]})
    txt = (tmp_path / "t.json").read_text()
    assert txt.index('"a"') < txt.index('"b"')
    assert json.loads(txt) == {"a": [1.5, None], "b": 2}
    line_plot(tmp_path / "p.svg", {"s&t": ([1, 2, 4], [1, 4, 16])}, title="<t>", logx=True, logy=True)
    svg = (tmp_path / "p.svg").read_text()
    assert svg.startswith("<?xml") and 'version="1.1"' in svg and "<polyline" in svg
    assert "s&amp;t" in svg and "&lt;t&gt;" in svg


def test_outputs_carry_hash(tmp_path):
    assert run_cli(tmp_path, small_config()) == 0
    out = tmp_path / "out"
    header = (out / "corona.csv").read_text().splitlines()[0]
    assert header.endswith("params_hash,code_version")
    s = json.loads((out / "summary.json").read_text())
    assert all(m["params_hash"] == s["params_hash"] for m in s["metrics"].values())
    assert (out / "corona_top.svg").exists()
