import hashlib
import struct

import numpy as np
import pytest

from adkd import weights as wfile


def hand_encoded(tensors, echo=None):
    """The documented byte layout, written out field by field."""
    out = b"ADKD" + struct.pack("<II", 1, len(tensors))
    for name, arr in tensors.items():
        raw = name.encode()
        out += struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim)
        out += b"".join(struct.pack("<I", d) for d in arr.shape)
        out += b"".join(struct.pack("<f", float(v)) for v in arr.ravel())
    if echo is not None:
        text = echo.encode()
        out += b"ECHO" + struct.pack("<I", len(text)) + text
    return out


TENSORS = {
    "a.weight": np.arange(6, dtype=np.float32).reshape(2, 3) / 4,
    "b": np.array([1.5, -2.0], dtype=np.float32),
    "scalar": np.array(3.25, dtype=np.float32),
}


def test_layout_and_checksum(tmp_path):
    blob = hand_encoded(TENSORS, "k = v\n")
    assert wfile.encode(TENSORS, "k = v\n") == blob
    digest = wfile.save(tmp_path / "w.adkd", TENSORS, "k = v\n")
    assert digest == hashlib.sha256(blob).hexdigest()
    assert wfile.save(tmp_path / "again.adkd", TENSORS, "k = v\n") == digest


def test_round_trip(tmp_path):
    wfile.save(tmp_path / "w.adkd", TENSORS)
    tensors, echo = wfile.load(tmp_path / "w.adkd")
    assert echo is None and list(tensors) == list(TENSORS)
    for k, v in TENSORS.items():
        np.testing.assert_array_equal(tensors[k], v)


@pytest.mark.parametrize("mutate, fragment", [
    (lambda b: b"XXXX" + b[4:], "magic"),
    (lambda b: b[:4] + struct.pack("<I", 9) + b[8:], "version"),
    (lambda b: b[:-3], "truncated"),
    (lambda b: b + b"junk", "trailing"),
])
def test_corrupt_files(mutate, fragment):
    with pytest.raises(wfile.WeightsFormatError, match=fragment):
        wfile.decode(mutate(hand_encoded(TENSORS)))


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        wfile.load(tmp_path / "absent.adkd")


def test_check_names_lists_offenders():
    expected = {"a": (2,), "b": (3,), "c": (1,)}
    found = {"a": np.zeros(2), "b": np.zeros(4), "d": np.zeros(1)}
    with pytest.raises(wfile.NamedTensorError) as info:
        wfile.check_names(expected, found)
    err = info.value
    assert err.missing == ["c"] and err.unexpected == ["d"]
    assert "b (4,) != (3,)" in str(err)
