import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from app.core.errors import DataFormatError, PointCloudError
from app.core.geom import pose_to_matrix, rotation_angle, transform_points
from app.util.synth import INDEX_NAME, generate_dataset, read_synth_dataset, synth_scene, write_synth_dataset


def test_pc2_is_pc1_moved_by_the_ground_truth():
    pair = synth_scene(100, max_rot_deg=5.0, max_trans=0.5, seed=3)
    assert len(pair.pc1) == len(pair.pc2) == 100
    assert_allclose(transform_points(pose_to_matrix(pair.gt), pair.pc1.xyz), pair.pc2.xyz, atol=1e-12)


def test_motion_stays_within_bounds():
    for pair in generate_dataset(20, seed=0, n_points=16, max_rot_deg=5.0, max_trans=0.5):
        assert np.rad2deg(rotation_angle(pose_to_matrix(pair.gt)[:3, :3])) <= 5.0 + 1e-9
        assert np.linalg.norm(pair.gt.t) <= 0.5 + 1e-12


def test_dataset_is_seeded():
    a = generate_dataset(3, seed=5, n_points=32, max_rot_deg=5.0, max_trans=0.5)
    b = generate_dataset(3, seed=5, n_points=32, max_rot_deg=5.0, max_trans=0.5)
    for x, y in zip(a, b):
        assert_array_equal(x.pc1.xyz, y.pc1.xyz)
        assert x.gt == y.gt
    assert [p.frame_index for p in a] == [0, 1, 2]


def test_noise_and_dropout_only_touch_pc2():
    clean = synth_scene(200, 5.0, 0.5, seed=9)
    noisy = synth_scene(200, 5.0, 0.5, noise_sigma=0.01, dropout=0.3, seed=9)
    assert_array_equal(noisy.pc1.xyz, clean.pc1.xyz)
    assert noisy.gt == clean.gt
    assert 0 < len(noisy.pc2) < 200


def test_scene_arguments_are_checked():
    with pytest.raises(PointCloudError):
        synth_scene(4, 5.0, 0.5)
    with pytest.raises(PointCloudError):
        synth_scene(64, 5.0, 0.5, dropout=1.0)


def test_written_dataset_reads_back_exactly(tmp_path):
    pairs = generate_dataset(3, seed=2, n_points=24, max_rot_deg=5.0, max_trans=0.5)
    assert write_synth_dataset(tmp_path, pairs) == tmp_path / INDEX_NAME
    back = read_synth_dataset(tmp_path)
    assert len(back) == 3
    for orig, read in zip(pairs, back):
        assert_array_equal(read.pc1.xyz, orig.pc1.xyz)
        assert_array_equal(read.pc2.xyz, orig.pc2.xyz)
        assert read.gt == orig.gt


def test_empty_dataset(tmp_path):
    write_synth_dataset(tmp_path, [])
    assert (tmp_path / INDEX_NAME).read_text().splitlines() == ["PWCLO-SYNTH 1", "count 0"]
    assert read_synth_dataset(tmp_path) == []


@pytest.mark.parametrize("text, message", [
    ("", "header"),
    ("PWCLO-SYNTH 2\ncount 0\n", "header"),
    ("PWCLO-SYNTH 1\ncount x\n", "count line"),
    ("PWCLO-SYNTH 1\ncount 2\n", "found 0"),
    ("PWCLO-SYNTH 1\ncount 1\n000000 a b 1 0 0\n", "6 fields"),
    ("PWCLO-SYNTH 1\ncount 1\n000000 a b 1 0 0 z 0 0 0\n", "non-numeric"),
    ("PWCLO-SYNTH 1\ncount 1\n000000 a b 0 0 0 0 0 0 0\n", "pair line 0"),
])
def test_malformed_index(tmp_path, text, message):
    (tmp_path / INDEX_NAME).write_text(text)
    with pytest.raises(DataFormatError, match=message):
        read_synth_dataset(tmp_path)


def test_missing_point_file(tmp_path):
    (tmp_path / INDEX_NAME).write_text("PWCLO-SYNTH 1\ncount 1\n000000 a.txt b.txt 1 0 0 0 0 0 0\n")
    with pytest.raises(DataFormatError, match="cannot read"):
        read_synth_dataset(tmp_path)
