"""
GeoLab - Box Geometry
Direction, minimum distance, nearest-in-direction and collinearity of axis-aligned boxes.

Image frame: x grows right, y grows down. Directions are the 45 degree sector of the
center-to-center vector; sector boundaries belong to the sector above them.
"""
import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Dict, Iterable, List, Sequence

import numpy as np

from geolab.utils.errors import InvalidBoxError


class Direction(IntEnum):
    RIGHT = 0
    BOTTOM_RIGHT = 1
    BOTTOM = 2
    BOTTOM_LEFT = 3
    LEFT = 4
    TOP_LEFT = 5
    TOP = 6
    TOP_RIGHT = 7
    OVERLAP = 8

    @property
    def antiphase(self) -> 'Direction':
        if self is Direction.OVERLAP:
            return self
        return Direction((self.value + 4) % 8)

    @classmethod
    def compass(cls) -> List['Direction']:
        return [d for d in cls if d is not cls.OVERLAP]


class CollinearClass(IntEnum):
    HORIZONTAL = 0
    VERTICAL = 1
    FORWARD_SLASH = 2
    BACKSLASH = 3
    NONE = 4


# direction index mod 4 -> line class of the antiphase pair
_LINE_OF_PAIR = {
    0: CollinearClass.HORIZONTAL,     # Right / Left
    1: CollinearClass.BACKSLASH,      # BottomRight / TopLeft
    2: CollinearClass.VERTICAL,       # Bottom / Top
    3: CollinearClass.FORWARD_SLASH,  # BottomLeft / TopRight
}

_PAIR_CLASS_LOOKUP = np.array([int(_LINE_OF_PAIR[k]) for k in range(4)], dtype=np.int64)

NUM_DIRECTIONS = len(Direction)
NUM_COLLINEAR_CLASSES = len(CollinearClass)


@dataclass(frozen=True)
class BBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise InvalidBoxError(f"non-finite box {coords}")
        if min(coords) < 0:
            raise InvalidBoxError(f"negative coordinate in box {coords}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise InvalidBoxError(f"degenerate box {coords}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def center(self):
        return ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)

    def to_list(self) -> List[float]:
        return [self.x1, self.y1, self.x2, self.y2]

    def translate(self, dx: float, dy: float) -> 'BBox':
        return BBox(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)

    def scale(self, s: float) -> 'BBox':
        return BBox(self.x1 * s, self.y1 * s, self.x2 * s, self.y2 * s)

    def contains(self, other: 'BBox') -> bool:
        return (self.x1 <= other.x1 and self.y1 <= other.y1
                and self.x2 >= other.x2 and self.y2 >= other.y2)

    @classmethod
    def from_list(cls, coords: Sequence[float]) -> 'BBox':
        if len(coords) != 4:
            raise InvalidBoxError(f"box needs 4 coordinates, got {len(coords)}")
        return cls(*(float(c) for c in coords))

    @classmethod
    def hull(cls, boxes: Iterable['BBox']) -> 'BBox':
        boxes = list(boxes)
        if not boxes:
            raise InvalidBoxError("hull of no boxes")
        return cls(min(b.x1 for b in boxes), min(b.y1 for b in boxes),
                   max(b.x2 for b in boxes), max(b.y2 for b in boxes))


def _sector(dx, dy):
    """Sector index 0..7 of the vector (dx, dy); works on scalars and arrays alike"""
    theta = np.degrees(np.arctan2(dy, dx))
    return np.mod(np.floor((theta + 22.5) / 45.0), 8).astype(np.int64)


def _overlaps(a: BBox, b: BBox) -> bool:
    return min(a.x2, b.x2) > max(a.x1, b.x1) and min(a.y2, b.y2) > max(a.y1, b.y1)


def direction(a: BBox, b: BBox) -> Direction:
    """Direction of b as seen from a"""
    if _overlaps(a, b):
        return Direction.OVERLAP
    (ax, ay), (bx, by) = a.center, b.center
    return Direction(int(_sector(np.float64(bx - ax), np.float64(by - ay))))


def min_distance(a: BBox, b: BBox) -> float:
    """Euclidean gap between the closest points of two rectangles"""
    dx = max(a.x1 - b.x2, 0.0, b.x1 - a.x2)
    dy = max(a.y1 - b.y2, 0.0, b.y1 - a.y2)
    return math.hypot(dx, dy)


def nearest_in_direction(anchor_index: int, segments: Sequence[BBox]) -> Dict[Direction, int]:
    """For each compass direction, the closest segment lying in it (ties: smallest index)"""
    if not 0 <= anchor_index < len(segments):
        raise IndexError(f"anchor index {anchor_index} out of range for {len(segments)} segments")
    anchor = segments[anchor_index]
    best: Dict[Direction, tuple] = {}
    for j, box in enumerate(segments):
        if j == anchor_index:
            continue
        d = direction(anchor, box)
        if d is Direction.OVERLAP:
            continue
        key = (min_distance(anchor, box), j)
        if d not in best or key < best[d]:
            best[d] = key
    return {d: j for d, (_, j) in best.items()}


def line_class(d: Direction) -> CollinearClass:
    if d is Direction.OVERLAP:
        return CollinearClass.NONE
    return _LINE_OF_PAIR[d.value % 4]


def collinearity(a: BBox, b: BBox, c: BBox) -> CollinearClass:
    """Collinear when the three pairwise directions share one antiphase pair"""
    classes = {line_class(direction(p, q)) for p, q in ((a, b), (b, c), (a, c))}
    if len(classes) != 1:
        return CollinearClass.NONE
    return classes.pop()


def boxes_to_array(boxes: Sequence[BBox]) -> np.ndarray:
    return np.array([b.to_list() for b in boxes], dtype=np.float64).reshape(-1, 4)


def direction_matrix(boxes: Sequence[BBox]) -> np.ndarray:
    """D[i, j] = direction(boxes[i], boxes[j]) as int; diagonal is OVERLAP"""
    arr = boxes_to_array(boxes)
    x1, y1, x2, y2 = (arr[:, k] for k in range(4))
    inter_w = np.minimum(x2[:, None], x2[None, :]) - np.maximum(x1[:, None], x1[None, :])
    inter_h = np.minimum(y2[:, None], y2[None, :]) - np.maximum(y1[:, None], y1[None, :])
    overlap = (inter_w > 0) & (inter_h > 0)
    cx, cy = (x1 + x2) / 2.0, (y1 + y2) / 2.0
    dx = cx[None, :] - cx[:, None]
    dy = cy[None, :] - cy[:, None]
    sectors = _sector(dx, dy)
    return np.where(overlap, int(Direction.OVERLAP), sectors).astype(np.int64)


def distance_matrix(boxes: Sequence[BBox]) -> np.ndarray:
    arr = boxes_to_array(boxes)
    x1, y1, x2, y2 = (arr[:, k] for k in range(4))
    dx = np.maximum(np.maximum(x1[:, None] - x2[None, :], x1[None, :] - x2[:, None]), 0.0)
    dy = np.maximum(np.maximum(y1[:, None] - y2[None, :], y1[None, :] - y2[:, None]), 0.0)
    return np.hypot(dx, dy)


def nearest_matrix(boxes: Sequence[BBox], directions: np.ndarray = None) -> np.ndarray:
    """N[i, j] = 1 iff j is nearest_in_direction(i)[direction(i, j)]"""
    n = len(boxes)
    if directions is None:
        directions = direction_matrix(boxes)
    distances = distance_matrix(boxes)
    nearest = np.zeros((n, n), dtype=np.int64)
    for i in range(n):
        for d in range(8):
            candidates = np.flatnonzero(directions[i] == d)
            if candidates.size:
                # argmin keeps the first, i.e. smallest, index among ties
                nearest[i, candidates[np.argmin(distances[i, candidates])]] = 1
    return nearest


def collinear_mask(directions: np.ndarray, cls: CollinearClass) -> np.ndarray:
    """M[i, j] = True iff direction(i, j) belongs to the antiphase pair of cls"""
    compass = directions != int(Direction.OVERLAP)
    pair_class = _PAIR_CLASS_LOOKUP[np.asarray(directions) % 4]
    return compass & (pair_class == int(cls))
