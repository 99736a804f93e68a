import struct
from collections import OrderedDict

import numpy as np
import pytest

from viewrank.io import (
    FormatError,
    read_annotations,
    read_boxes,
    read_ppm,
    read_tensors,
    write_annotations,
    write_boxes,
    write_ppm,
    write_tensors,
)
from viewrank.views import Annotation


def test_tensor_roundtrip_bitwise(tmp_path):
    rng = np.random.default_rng(0)
    tensors = OrderedDict([
        ("conv1.w", rng.normal(size=(8, 3, 3, 3))),
        ("scalar", np.array(np.pi)),
        ("empty", np.zeros((0, 4))),
        ("special", np.array([0.0, -0.0, 1e-308, 5e-324, 1.7976931348623157e308])),
        ("ünïcode", np.arange(6.0).reshape(2, 3)),
    ])
    path = tmp_path / "t.crtn"
    write_tensors(path, tensors)
    back = read_tensors(path)
    assert list(back) == list(tensors)
    for k in tensors:
        assert back[k].shape == tensors[k].shape
        assert back[k].tobytes() == np.ascontiguousarray(tensors[k]).tobytes()


def test_tensor_header_layout(tmp_path):
    path = tmp_path / "t.crtn"
    write_tensors(path, {"a": np.array([1.0, 2.0])})
    raw = path.read_bytes()
    assert raw[:4] == b"CRTN"
    assert struct.unpack("<HI", raw[4:10]) == (1, 1)
    assert struct.unpack("<I", raw[10:14]) == (1,)
    assert raw[14:15] == b"a"
    assert struct.unpack("<BI", raw[15:20]) == (1, 1)
    assert struct.unpack("<Q", raw[20:28]) == (2,)
    assert np.frombuffer(raw[28:], "<f8").tolist() == [1.0, 2.0]


def test_tensor_errors(tmp_path):
    path = tmp_path / "t.crtn"
    write_tensors(path, {"a": np.ones(3)})
    raw = path.read_bytes()
    for name, data in [("magic", b"XXXX" + raw[4:]), ("trunc", raw[:-3]), ("trail", raw + b"\0")]:
        bad = tmp_path / name
        bad.write_bytes(data)
        with pytest.raises(FormatError):
            read_tensors(bad)


def test_ppm_roundtrip(tmp_path):
    img = np.random.default_rng(1).integers(0, 256, size=(3, 5, 7)) / 255.0
    path = tmp_path / "x.ppm"
    write_ppm(path, img)
    np.testing.assert_allclose(read_ppm(path), img, atol=1e-12)


def test_ppm_with_comment(tmp_path):
    path = tmp_path / "c.ppm"
    path.write_bytes(b"P6\n# made by hand\n2 1\n255\n" + bytes([255, 0, 0, 0, 0, 255]))
    img = read_ppm(path)
    assert img.shape == (3, 1, 2)
    np.testing.assert_array_equal(img[:, 0, 0], [1, 0, 0])


@pytest.mark.parametrize("data", [
    b"P3\n1 1\n255\n",
    b"P6\n1 1\n65535\n" + bytes(6),
    b"P6\n2 2\n255\n" + bytes(5),
    b"P6\nx 2\n255\n",
    b"P6\n1",
])
def test_ppm_malformed_names_offset(tmp_path, data):
    path = tmp_path / "bad.ppm"
    path.write_bytes(data)
    with pytest.raises(FormatError, match="offset"):
        read_ppm(path)


def test_boxes_roundtrip(tmp_path):
    boxes = np.array([[0, 0, 1, 1], [0.1, 0.2, 0.3, 0.4]])
    path = tmp_path / "b.json"
    write_boxes(path, boxes)
    np.testing.assert_array_equal(read_boxes(path), boxes)
    path.write_text("[[0, 0, 2, 1]]")
    with pytest.raises(FormatError):
        read_boxes(path)
    path.write_text("not json")
    with pytest.raises(FormatError):
        read_boxes(path)


def test_annotations_roundtrip(tmp_path):
    anns = [Annotation("a", [(0, 0, 1, 1)]), Annotation("b", [(0, 0, .5, .5), (.5, .5, 1, 1)])]
    path = tmp_path / "a.json"
    write_annotations(path, anns)
    back = read_annotations(path)
    assert [a.image_id for a in back] == ["a", "b"]
    assert back[1].gt_boxes == anns[1].gt_boxes
    path.write_text('[{"image_id": "x"}]')
    with pytest.raises(FormatError, match="entry 0"):
        read_annotations(path)
