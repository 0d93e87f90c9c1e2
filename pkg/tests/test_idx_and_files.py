import gzip
import json
import math

import numpy as np
import pytest

from fecim.idx import IMAGES_MAGIC, IdxFormatError, read_idx, read_images, read_labels, write_idx
from fecim.report import csv_text, fmt, write_json


def test_idx_round_trip(tmp_path):
    imgs = np.random.default_rng(0).integers(0, 256, (5, 28, 28), dtype=np.uint8)
    labels = np.arange(5, dtype=np.uint8)
    write_idx(tmp_path / "i.idx", imgs)
    write_idx(tmp_path / "l.idx.gz", labels)
    assert np.array_equal(read_images(tmp_path / "i.idx"), imgs)
    assert np.array_equal(read_labels(tmp_path / "l.idx.gz"), labels)


def test_idx_header_layout(tmp_path):
    write_idx(tmp_path / "i.idx", np.zeros((2, 3, 4), dtype=np.uint8))
    raw = (tmp_path / "i.idx").read_bytes()
    assert raw[:4] == bytes([0, 0, 8, 3])
    assert int.from_bytes(raw[:4], "big") == IMAGES_MAGIC
    assert raw[4:16] == bytes([0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0, 4])


def test_gz_output_reproducible(tmp_path):
    a = write_idx(tmp_path / "a.gz", np.arange(10, dtype=np.uint8)).read_bytes()
    b = write_idx(tmp_path / "b.gz", np.arange(10, dtype=np.uint8)).read_bytes()
    assert a == b


def test_wrong_magic(tmp_path):
    write_idx(tmp_path / "l.idx", np.arange(3, dtype=np.uint8))
    with pytest.raises(IdxFormatError, match="offset 0.*0x00000801, expected 0x00000803"):
        read_images(tmp_path / "l.idx")


def test_truncated_payload(tmp_path):
    write_idx(tmp_path / "i.idx", np.zeros((2, 2, 2), dtype=np.uint8))
    p = tmp_path / "i.idx"
    p.write_bytes(p.read_bytes()[:-1])
    with pytest.raises(IdxFormatError, match="offset 16"):
        read_idx(p)


def test_truncated_header(tmp_path):
    (tmp_path / "x.idx").write_bytes(bytes([0, 0, 8, 3, 0, 0]))
    with pytest.raises(IdxFormatError, match="offset 4"):
        read_idx(tmp_path / "x.idx")


def test_non_byte_type(tmp_path):
    (tmp_path / "x.idx").write_bytes(bytes([0, 0, 0x0D, 1, 0, 0, 0, 0]))
    with pytest.raises(IdxFormatError, match="unsigned-byte"):
        read_idx(tmp_path / "x.idx")


def test_fmt_precision():
    assert fmt(0.1) == "0.10000000000000001"
    assert float(fmt(1 / 3)) == 1 / 3
    assert fmt(math.inf) == "inf" and fmt(-math.inf) == "-inf"
    assert fmt(np.int64(3)) == "3" and fmt(True) == "1"


def test_csv_text():
    assert csv_text(("a", "b"), [(1, 0.5)]) == "a,b\n1,0.5\n"


def test_json_special_values(tmp_path):
    write_json(tmp_path / "x.json", {"a": math.inf, "b": math.nan, "c": np.array([1.5, 2.0])})
    assert json.loads((tmp_path / "x.json").read_text()) == {"a": "inf", "b": None, "c": [1.5, 2.0]}
