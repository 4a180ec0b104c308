import math

import numpy as np
import pytest

from dentobox.errors import DegenerateMaskError, InvariantError, MissingLabelError
from dentobox.labelmap import LabelMap
from dentobox.obb import (
    Hbb,
    export_obbs,
    generate_obb,
    generate_obbs,
    hbb,
    isolate_tooth,
    load_obbs,
    pca,
    rotate_points,
    rotation_matrix,
    rotation_theta,
    tooth_hbb,
)


def test_rotation_theta_hand_values():
    assert rotation_theta(90.0) == 0.0
    assert rotation_theta(30.0) == 60.0
    assert rotation_theta(-45.0) == 315.0
    assert rotation_theta(0.0) == 90.0


def test_rotation_theta_range():
    for angle in np.linspace(-89.999, 90.0, 721):
        theta = rotation_theta(float(angle))
        assert 0.0 <= theta <= 90.0 or 270.0 < theta < 360.0


def test_rotation_matrix_is_rigid_and_fixes_pivot():
    matrix = rotation_matrix(37.0, (5.0, -2.0))
    np.testing.assert_allclose(matrix[:2, :2] @ matrix[:2, :2].T, np.eye(2), atol=1e-12)
    np.testing.assert_allclose(rotate_points([(5.0, -2.0)], 37.0, (5.0, -2.0)), [[5.0, -2.0]], atol=1e-12)


def test_rotate_points_quarter_and_half_turn():
    np.testing.assert_allclose(rotate_points([(1.0, 0.0)], 90.0, (0.0, 0.0)), [[0.0, 1.0]], atol=1e-12)
    np.testing.assert_allclose(rotate_points([(2.0, 1.0)], 180.0, (1.0, 1.0)), [[0.0, 1.0]], atol=1e-12)


def test_rotate_then_inverse_rotate_round_trip():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        point = rng.uniform(-500, 500, size=2)
        pivot = rng.uniform(-500, 500, size=2)
        theta = rng.uniform(0, 360)
        back = rotate_points(rotate_points(point, theta, pivot), -theta, pivot)
        assert np.max(np.abs(back - point)) <= 1e-9


def test_isolate_tooth_missing_label():
    label_map = LabelMap(np.array([[0, 1], [1, 1]]))
    assert isolate_tooth(label_map, 1).sum() == 3
    with pytest.raises(MissingLabelError):
        isolate_tooth(label_map, 2)
    with pytest.raises(MissingLabelError):
        isolate_tooth(label_map, 0)


def test_pca_degenerate_masks():
    mask = np.zeros((5, 5), dtype=bool)
    mask[2, 2] = True
    with pytest.raises(DegenerateMaskError):
        pca(mask)


def test_pca_horizontal_and_vertical_bars():
    mask = np.zeros((20, 20), dtype=bool)
    mask[9:11, 2:18] = True
    assert pca(mask).pca_angle == pytest.approx(0.0, abs=1e-9)
    assert pca(mask.T).pca_angle == pytest.approx(90.0, abs=1e-9)


def test_pca_isotropic_mask_is_treated_as_upright():
    mask = np.zeros((10, 10), dtype=bool)
    mask[2:7, 2:7] = True
    result = pca(mask)
    assert result.is_isotropic
    assert rotation_theta(result.pca_angle) == 0.0


def test_upright_rectangle_obb_equals_hbb():
    array = np.zeros((50, 40), dtype=np.int64)
    array[10:40, 20:30] = 8
    label_map = LabelMap(array)
    obb = generate_obb(label_map, 8)
    assert obb.theta == pytest.approx(0.0, abs=1e-9)
    np.testing.assert_allclose(obb.polygon(), tooth_hbb(label_map, 8).corners(), atol=1e-9)


def test_hbb_validation():
    box = hbb([(3, 4), (1, 9), (2, 2)])
    assert box.as_list() == [1.0, 2.0, 3.0, 9.0]
    assert (box.width, box.height) == (2.0, 7.0)
    with pytest.raises(ValueError):
        hbb(np.zeros((0, 2)))
    with pytest.raises(InvariantError):
        Hbb(2, 0, 1, 1)


def _angle_distance_mod_180(a, b):
    diff = (a - b) % 180.0
    return min(diff, 180.0 - diff)


def test_obb_recovers_synthetic_rectangles(rotated_rect_mask, rect_corners):
    rng = np.random.default_rng(42)
    for _ in range(50):
        width = rng.uniform(10, 20)
        length = rng.uniform(2 * width, 70)
        center = rng.uniform(70, 130, size=2)
        angle = rng.uniform(0, 180)
        mask = rotated_rect_mask((200, 200), center, length, width, angle)
        label_map = LabelMap(mask.astype(np.int64) * 3)
        obb = generate_obb(label_map, 3)

        expected = rect_corners(center, length, width, angle)
        recovered = obb.polygon()
        for corner in expected:
            assert np.min(np.hypot(*(recovered - corner).T)) <= 1.5

        # θ 把长轴转到竖直方向
        assert _angle_distance_mod_180(obb.theta, 90.0 - angle) <= 2.0

        ys, xs = np.nonzero(mask)
        assert all(obb.contains((x, y)) for x, y in zip(xs, ys))


def test_obb_is_rectangle_with_hbb_sides(rotated_rect_mask):
    mask = rotated_rect_mask((120, 120), (60, 60), 60, 20, 33)
    obb = generate_obb(LabelMap(mask.astype(np.int64)), 1)
    corners = obb.polygon()
    edges = np.roll(corners, -1, axis=0) - corners
    for i in range(4):
        assert abs(np.dot(edges[i], edges[(i + 1) % 4])) < 1e-9
    assert obb.area == pytest.approx(obb.width * obb.height)


def test_generate_obbs_postprocesses_and_skips_degenerate():
    array = np.zeros((30, 30), dtype=np.int64)
    array[2:20, 2:8] = 5
    array[25, 25] = 5  # 多余区域，后处理后消失
    array[2:12, 15:27] = 6
    array[28, 2] = 9  # 单像素牙，无法做 PCA
    obbs, skipped = generate_obbs(LabelMap(array))
    assert [o.label for o in obbs] == [5, 6]
    assert skipped == {9: "degenerate_mask"}
    assert all(o.contains((25, 25)) is False for o in obbs)


def test_generate_obbs_empty_map():
    obbs, skipped = generate_obbs(LabelMap(np.zeros((8, 8), dtype=np.int64)))
    assert obbs == [] and skipped == {}


def test_export_and_load_obbs(dentition_map):
    obbs, _ = generate_obbs(dentition_map)
    hbbs = {o.label: tooth_hbb(dentition_map, o.label) for o in obbs}
    document = export_obbs("case_001", obbs, hbbs)
    assert document["image"] == "case_001"
    assert [t["label"] for t in document["teeth"]] == dentition_map.labels_present()
    assert set(document["teeth"][0]) == {"label", "pca_angle_deg", "theta_deg", "pivot", "corners", "hbb"}

    image_id, loaded = load_obbs(document)
    assert image_id == "case_001"
    for original, reloaded in zip(obbs, loaded):
        assert np.max(np.abs(original.polygon() - reloaded.polygon())) <= 1e-2


def test_export_without_hbb_has_published_keys(dentition_map):
    obbs, _ = generate_obbs(dentition_map)
    document = export_obbs("x", obbs)
    assert set(document["teeth"][0]) == {"label", "pca_angle_deg", "theta_deg", "pivot", "corners"}


def test_load_obbs_rejects_malformed_document():
    with pytest.raises(InvariantError):
        load_obbs({"image": "a", "teeth": [{"label": 1, "corners": [[0, 0]] * 3}]})
    with pytest.raises(InvariantError):
        load_obbs({"teeth": []})


def test_obb_angle_for_diagonal_bar(rotated_rect_mask):
    mask = rotated_rect_mask((100, 100), (50, 50), 60, 8, 45)
    result = pca(mask)
    assert result.pca_angle == pytest.approx(45.0, abs=1.0)
    assert math.isclose(rotation_theta(result.pca_angle), 90.0 - result.pca_angle)
