from unittest import mock

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tlsxplain.utils import (
    LOGIT_CLAMP,
    atomic_write,
    canonical_json,
    file_digest,
    format_float,
    logit,
    logit_array,
    population_std,
    sigmoid,
    sigmoid_array,
)


@given(st.floats(min_value=-LOGIT_CLAMP, max_value=LOGIT_CLAMP))
def test_logit_inverts_sigmoid(z):
    assert logit(sigmoid(z)) == pytest.approx(z, abs=1e-6)


def test_logit_is_clamped():
    assert logit(0.0) == -LOGIT_CLAMP
    assert logit(1.0) == LOGIT_CLAMP
    assert logit_array(np.array([0.0, 0.5, 1.0])).tolist() == \
        [-LOGIT_CLAMP, 0.0, LOGIT_CLAMP]


def test_sigmoid_extremes_stay_finite():
    out = sigmoid_array(np.array([-1000.0, 0.0, 1000.0]))

    assert out.tolist() == [0.0, 0.5, 1.0]
    assert sigmoid(-1000.0) == 0.0


def test_population_std():
    assert population_std(np.array([1.0])) == 0.0
    assert population_std(np.array([1.0, 3.0])) == 1.0


@pytest.mark.parametrize("value, text", [
    (3.0, "3"),
    (0.0, "0"),
    (-0.0, "-0.0"),
    (-3.0, "-3"),
    (0.1, "0.1"),
    (1e20, "1e+20"),
])
def test_format_float(value, text):
    assert format_float(value) == text


def test_canonical_json_sorts_keys():
    assert canonical_json({"b": 1, "a": 2}) == '{\n  "a": 2,\n  "b": 1\n}\n'


def test_atomic_write_creates_parents(tmp_path):
    target = tmp_path / "a" / "b.txt"

    atomic_write(target, "x,y\n")
    atomic_write(tmp_path / "c.bin", b"\x00\x01")

    assert target.read_text() == "x,y\n"
    assert (tmp_path / "c.bin").read_bytes() == b"\x00\x01"


@mock.patch('tlsxplain.utils.os.replace', side_effect=OSError("disk"))
def test_atomic_write_leaves_no_partial_file(replace, tmp_path):
    target = tmp_path / "out.csv"
    target.write_text("old")

    with pytest.raises(OSError):
        atomic_write(target, "new")

    assert replace.called
    assert target.read_text() == "old"
    assert [p.name for p in tmp_path.iterdir()] == ["out.csv"]


def test_file_digest(tmp_path):
    path = tmp_path / "empty"
    path.write_bytes(b"")

    assert file_digest(path) == (
        "e3b0c44298fc1c149afbf4c8996fb924"
        "27ae41e4649b934ca495991b7852b855"
    )
