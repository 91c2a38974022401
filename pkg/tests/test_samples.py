import numpy as np
import pytest

from dircov.errors import InvalidInputError
from dircov.samples import (
    SampleSet,
    from_bytes,
    load_samples,
    make_rng,
    read_bin,
    read_csv,
    to_bytes,
    write_bin,
    write_csv,
)


def test_make_rng_reproducible_and_keyed():
    a = make_rng(5, "exp", 1).standard_normal(4)
    b = make_rng(5, "exp", 1).standard_normal(4)
    c = make_rng(5, "exp", 2).standard_normal(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_sampleset_is_read_only():
    s = SampleSet(np.ones((3, 2)))
    with pytest.raises(ValueError):
        s.data[0, 0] = 2.0
    assert s.n == 3 and s.dim == 2


def test_csv_round_trip(tmp_path):
    s = SampleSet(np.random.default_rng(0).standard_normal((7, 3)))
    p = tmp_path / "x.csv"
    write_csv(s, p)
    assert p.read_text().splitlines()[0] == "x1,x2,x3"
    assert np.array_equal(read_csv(p).data, s.data)
    assert np.array_equal(load_samples(p).data, s.data)


def test_binary_layout_and_round_trip(tmp_path):
    s = SampleSet(np.arange(6, dtype=float).reshape(3, 2))
    raw = to_bytes(s)
    assert raw[:4] == b"DCV1"
    assert int.from_bytes(raw[4:8], "little") == 3
    assert int.from_bytes(raw[8:12], "little") == 2
    assert len(raw) == 16 + 8 * 6
    assert np.array_equal(np.frombuffer(raw[16:], "<f8"), np.arange(6.0))
    p = tmp_path / "x.bin"
    write_bin(s, p)
    assert np.array_equal(read_bin(p).data, s.data)
    assert np.array_equal(load_samples(p).data, s.data)


def test_bad_inputs(tmp_path):
    with pytest.raises(InvalidInputError):
        from_bytes(b"XXXX" + bytes(12))
    p = tmp_path / "bad.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(InvalidInputError):
        read_csv(p)
