import json
import math

import numpy as np
import pytest

from parapde.serialization import (
    dumps_manifest,
    format_float,
    load_field,
    load_spacetime,
    save_field,
    save_spacetime,
    write_csv,
    write_field_csv,
    write_manifest,
)
from parapde.spectral_core import Field, Grid, SpaceTimeField


def test_floats_keep_full_precision():
    x = 0.1 + 0.2
    assert float(format_float(x)) == x
    assert format_float(float("nan")) == '"nan"'
    assert format_float(-math.inf) == '"-inf"'


def test_manifest_is_sorted_and_parseable():
    text = dumps_manifest({"b": [1.0, 2], "a": {"z": True, "y": None}, "c": np.arange(3)})
    assert text.index('"a"') < text.index('"b"') < text.index('"c"')
    assert json.loads(text) == {"a": {"y": None, "z": True}, "b": [1.0, 2], "c": [0, 1, 2]}


def test_manifest_bytes_are_deterministic(tmp_path):
    obj = {"x": 1 / 3, "grid": Grid(1, 16, 1.0)}
    p1 = write_manifest(tmp_path / "a.json", obj)
    p2 = write_manifest(tmp_path / "b.json", dict(reversed(list(obj.items()))))
    assert p1.read_bytes() == p2.read_bytes()


def test_unserializable_object():
    with pytest.raises(TypeError):
        dumps_manifest({"x": object()})


def test_field_roundtrip(tmp_path):
    g = Grid(2, 16, 1.5)
    f = Field(g, np.random.default_rng(0).standard_normal(g.shape))
    save_field(tmp_path / "f", f)
    back = load_field(tmp_path / "f.bin")
    assert back.grid == g
    np.testing.assert_array_equal(back.values, f.values)


def test_spacetime_roundtrip(tmp_path):
    g = Grid(1, 16, 1.0)
    t = np.linspace(0, 1, 4)
    f = SpaceTimeField(g, t, np.random.default_rng(1).standard_normal((4, 16)))
    save_spacetime(tmp_path / "u", f)
    back = load_spacetime(tmp_path / "u")
    np.testing.assert_array_equal(back.times, t)
    np.testing.assert_array_equal(back.values, f.values)


def test_csv(tmp_path):
    p = write_csv(tmp_path / "r.csv", ["a", "b"], [(1.0, "x"), (0.5, "y")])
    assert p.read_text().splitlines() == ["a,b", "1,x", "0.5,y"]
    g = Grid(1, 16, 1.0)
    q = write_field_csv(tmp_path / "f.csv", Field(g, np.zeros(16)))
    assert len(q.read_text().splitlines()) == 17
    with pytest.raises(ValueError):
        write_field_csv(tmp_path / "g.csv", Field(Grid(2, 16, 1.0), np.zeros((16, 16))))
