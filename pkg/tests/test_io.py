import json

import numpy as np
import pytest
from PIL import Image

from gaitcontour import io
from gaitcontour.errors import FormatError


def test_pgm_round_trip(tmp_path):
    img = (np.random.default_rng(0).random((7, 5)) * 255).astype(np.uint8)
    io.write_pgm(tmp_path / "a.pgm", img)
    assert np.array_equal(io.read_pgm(tmp_path / "a.pgm"), img)


def test_pgm_with_comment(tmp_path):
    (tmp_path / "c.pgm").write_bytes(b"P5\n# made by hand\n2 1\n255\n\x00\xff")
    assert io.read_pgm(tmp_path / "c.pgm").tolist() == [[0, 255]]
    assert io.read_mask(tmp_path / "c.pgm").tolist() == [[False, True]]


def test_png_mask_threshold(tmp_path):
    arr = np.array([[0, 127, 128, 255]], dtype=np.uint8)
    Image.fromarray(arr).save(tmp_path / "m.png")
    assert io.read_mask(tmp_path / "m.png").tolist() == [[False, False, True, True]]


def test_mask_dir_order(tmp_path):
    for i, v in ((2, 255), (1, 0), (10, 255)):
        io.write_pgm(tmp_path / f"{i:06d}.pgm", np.full((2, 2), v, dtype=np.uint8))
    masks = io.read_mask_dir(tmp_path)
    assert masks.shape == (3, 2, 2)
    assert [bool(m.all()) for m in masks] == [False, True, True]


def test_pose_json(tmp_path):
    doc = {"frames": [{"keypoints": [[i, i + 1, 0.5] for i in range(17)]}] * 2, "subject_id": "S3"}
    (tmp_path / "p.json").write_text(json.dumps(doc))
    pose = io.read_pose_json(tmp_path / "p.json")
    assert pose["keypoints"].shape == (2, 17, 3) and pose["subject_id"] == "S3"


def test_cpz_header_and_round_trip():
    pts = np.random.default_rng(1).normal(size=(3, 165, 2)).astype(np.float32)
    blob = io.cpz_dumps(pts, 15)
    assert blob[:4] == b"CPZ1"
    assert np.frombuffer(blob[4:16], "<u4").tolist() == [3, 15, 165]
    back, anchors = io.cpz_loads(blob)
    assert anchors == 15 and back.tobytes() == pts.astype("<f4").tobytes()
    with pytest.raises(FormatError):
        io.cpz_loads(blob[:-4])
