"""
GeoLab - Geometry Tests
"""
import itertools
import math

import numpy as np
import pytest

from geolab.models.geometry import (BBox, CollinearClass, Direction, collinearity, direction,
                                    direction_matrix, distance_matrix, min_distance,
                                    nearest_in_direction, nearest_matrix)
from geolab.utils.errors import InvalidBoxError


def random_boxes(rng, count, extent=200):
    boxes = []
    for _ in range(count):
        x1, y1 = rng.integers(0, extent, size=2)
        w, h = rng.integers(1, 30, size=2)
        boxes.append(BBox(float(x1), float(y1), float(x1 + w), float(y1 + h)))
    return boxes


def sector_oracle(a, b):
    """Independent direction oracle: membership test against the eight sector bisectors"""
    if min(a.x2, b.x2) > max(a.x1, b.x1) and min(a.y2, b.y2) > max(a.y1, b.y1):
        return Direction.OVERLAP
    dx = b.center[0] - a.center[0]
    dy = b.center[1] - a.center[1]
    norm = math.hypot(dx, dy)
    cosines = [(dx * math.cos(math.radians(45 * k)) + dy * math.sin(math.radians(45 * k))) / norm
               for k in range(8)]
    return Direction(int(np.argmax(cosines)))


class TestDirection:
    def test_right(self):
        assert direction(BBox(0, 0, 10, 10), BBox(20, 0, 30, 10)) is Direction.RIGHT

    def test_identical_boxes_overlap(self):
        box = BBox(0, 0, 10, 10)
        assert direction(box, box) is Direction.OVERLAP

    def test_bottom_right_in_image_frame(self):
        assert direction(BBox(0, 0, 10, 10), BBox(40, 40, 50, 50)) is Direction.BOTTOM_RIGHT

    def test_above_is_top(self):
        assert direction(BBox(0, 40, 10, 50), BBox(0, 0, 10, 10)) is Direction.TOP

    def test_touching_edges_do_not_overlap(self):
        assert direction(BBox(0, 0, 10, 10), BBox(10, 0, 20, 10)) is Direction.RIGHT

    def test_matches_sector_oracle(self, rng):
        boxes = random_boxes(rng, 120)
        for a, b in itertools.combinations(boxes, 2):
            assert direction(a, b) is sector_oracle(a, b)

    def test_antisymmetry(self, rng):
        boxes = random_boxes(rng, 60)
        for a, b in itertools.combinations(boxes, 2):
            assert direction(b, a) is direction(a, b).antiphase

    def test_translation_and_scale_invariance(self, rng):
        boxes = random_boxes(rng, 40)
        for a, b in itertools.combinations(boxes, 2):
            expected = direction(a, b)
            assert direction(a.translate(17, 5), b.translate(17, 5)) is expected
            assert direction(a.scale(2.0), b.scale(2.0)) is expected

    def test_direction_matrix_agrees_with_scalar(self, rng):
        boxes = random_boxes(rng, 30)
        matrix = direction_matrix(boxes)
        for i, j in itertools.product(range(len(boxes)), repeat=2):
            if i == j:
                assert matrix[i, j] == Direction.OVERLAP
            else:
                assert matrix[i, j] == direction(boxes[i], boxes[j])


class TestMinDistance:
    def test_horizontal_gap(self):
        assert min_distance(BBox(0, 0, 10, 10), BBox(20, 0, 30, 10)) == 10

    def test_overlap_is_zero(self):
        assert min_distance(BBox(0, 0, 10, 10), BBox(5, 5, 15, 15)) == 0

    def test_corner_gap(self):
        assert min_distance(BBox(0, 0, 10, 10), BBox(13, 14, 20, 20)) == pytest.approx(5.0)

    def test_symmetric_and_matrix_consistent(self, rng):
        boxes = random_boxes(rng, 25)
        matrix = distance_matrix(boxes)
        for i, j in itertools.combinations(range(len(boxes)), 2):
            assert min_distance(boxes[i], boxes[j]) == pytest.approx(min_distance(boxes[j], boxes[i]))
            assert matrix[i, j] == pytest.approx(min_distance(boxes[i], boxes[j]))

    def test_matches_dense_boundary_sampling(self, rng):
        def boundary(box, steps=40):
            xs = np.linspace(box.x1, box.x2, steps)
            ys = np.linspace(box.y1, box.y2, steps)
            return np.array([(x, y) for x in xs for y in (box.y1, box.y2)] +
                            [(x, y) for y in ys for x in (box.x1, box.x2)])

        for a, b in zip(random_boxes(rng, 10), random_boxes(rng, 10)):
            if direction(a, b) is Direction.OVERLAP:
                continue
            pa, pb = boundary(a), boundary(b)
            sampled = np.min(np.hypot(pa[:, None, 0] - pb[None, :, 0], pa[:, None, 1] - pb[None, :, 1]))
            assert min_distance(a, b) <= sampled + 1e-9
            assert sampled - min_distance(a, b) < 1.0


class TestNearestInDirection:
    def test_nearer_segment_wins(self):
        boxes = [BBox(0, 0, 10, 10), BBox(50, 0, 60, 10), BBox(20, 0, 30, 10)]
        assert nearest_in_direction(0, boxes)[Direction.RIGHT] == 2

    def test_ties_go_to_smallest_index(self):
        boxes = [BBox(0, 0, 10, 10), BBox(20, 0, 30, 10), BBox(20, 2, 30, 8)]
        assert nearest_in_direction(0, boxes)[Direction.RIGHT] == 1

    def test_missing_direction_has_no_key(self):
        boxes = [BBox(0, 0, 10, 10), BBox(20, 0, 30, 10), BBox(0, 20, 10, 30)]
        result = nearest_in_direction(0, boxes)
        assert Direction.TOP not in result
        assert Direction.OVERLAP not in result
        assert result[Direction.BOTTOM] == 2

    def test_anchor_out_of_range(self):
        with pytest.raises(IndexError):
            nearest_in_direction(3, [BBox(0, 0, 1, 1)])

    def test_nearest_matrix_agrees(self, rng):
        boxes = random_boxes(rng, 20)
        matrix = nearest_matrix(boxes)
        for i in range(len(boxes)):
            expected = set(nearest_in_direction(i, boxes).values())
            assert set(np.flatnonzero(matrix[i]).tolist()) == expected


class TestCollinearity:
    def test_horizontal(self):
        boxes = BBox(0, 0, 10, 10), BBox(20, 0, 30, 10), BBox(40, 0, 50, 10)
        assert collinearity(*boxes) is CollinearClass.HORIZONTAL

    def test_vertical_stack(self):
        boxes = BBox(0, 0, 10, 10), BBox(0, 20, 10, 30), BBox(0, 40, 10, 50)
        assert collinearity(*boxes) is CollinearClass.VERTICAL

    def test_downward_diagonal_is_backslash(self):
        boxes = BBox(0, 0, 10, 10), BBox(20, 20, 30, 30), BBox(40, 40, 50, 50)
        assert collinearity(*boxes) is CollinearClass.BACKSLASH

    def test_upward_diagonal_is_forward_slash(self):
        boxes = BBox(0, 40, 10, 50), BBox(20, 20, 30, 30), BBox(40, 0, 50, 10)
        assert collinearity(*boxes) is CollinearClass.FORWARD_SLASH

    def test_l_shape_is_none(self):
        boxes = BBox(0, 0, 10, 10), BBox(20, 0, 30, 10), BBox(0, 20, 10, 30)
        assert collinearity(*boxes) is CollinearClass.NONE

    def test_overlapping_pair_is_none(self):
        boxes = BBox(0, 0, 10, 10), BBox(5, 0, 15, 10), BBox(40, 0, 50, 10)
        assert collinearity(*boxes) is CollinearClass.NONE

    def test_permutation_invariant(self, rng):
        boxes = random_boxes(rng, 12)
        for triple in itertools.combinations(boxes, 3):
            classes = {collinearity(*p) for p in itertools.permutations(triple)}
            assert len(classes) == 1


class TestBBox:
    @pytest.mark.parametrize('coords', [
        (10, 0, 5, 10),
        (0, 0, 0, 10),
        (-1, 0, 5, 5),
        (0, 0, float('nan'), 1),
    ])
    def test_invalid_boxes(self, coords):
        with pytest.raises(InvalidBoxError):
            BBox(*coords)

    def test_hull(self):
        hull = BBox.hull([BBox(0, 5, 10, 10), BBox(20, 0, 30, 8)])
        assert hull.to_list() == [0, 0, 30, 10]

    def test_from_list_needs_four_coordinates(self):
        with pytest.raises(InvalidBoxError):
            BBox.from_list([1, 2, 3])
