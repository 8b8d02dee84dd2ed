import math

import numpy as np
import pytest

from deliverysim.geom import Pose2D
from deliverysim.world import (
    MISS,
    OccupancyGrid,
    World2D,
    WorldFormatError,
    load_world,
    make_world,
    raycast,
    raycast_batch,
    rasterize_world,
    rect_segments,
)


def raymarch_oracle(w: World2D, origin, bearing, max_range, step=0.001) -> float:
    """Walk the ray in 1 mm steps and test point-to-segment distance."""
    if w.n_segments == 0:
        return MISS
    d = np.array([math.cos(bearing), math.sin(bearing)])
    o = np.asarray(origin, dtype=float)
    p0 = w.segments[:, 0]
    e = w.segments[:, 1] - p0
    ee = (e * e).sum(axis=1)
    for t in np.arange(0.0, max_range + step, step):
        p = o + t * d
        u = np.clip(((p - p0) * e).sum(axis=1) / ee, 0.0, 1.0)
        closest = p0 + u[:, None] * e
        if np.linalg.norm(closest - p, axis=1).min() < step / 2:
            return t
    return MISS


def square_room(half=5.0) -> World2D:
    return make_world(rect_segments(-half, -half, half, half))


class TestRaycast:
    def test_square_room_center(self):
        assert raycast(square_room(), (0, 0), 0.0, 100.0) == pytest.approx(5.0, abs=1e-12)

    def test_empty_world_misses(self):
        w = make_world([])
        assert raycast(w, (0, 0), 1.0, 100.0) == MISS

    def test_matches_raymarch_oracle(self):
        rng = np.random.default_rng(21)
        for _ in range(12):
            cx, cy = rng.uniform(-2, 2, 2)
            hw, hh = rng.uniform(2, 6, 2)
            segs = rect_segments(cx - hw, cy - hh, cx + hw, cy + hh)
            # one random interior wall
            x0, y0 = rng.uniform(-1.5, 1.5, 2)
            ang = rng.uniform(0, math.pi)
            segs.append((x0, y0, x0 + 2 * math.cos(ang), y0 + 2 * math.sin(ang)))
            w = make_world(segs)
            for bearing in rng.uniform(-math.pi, math.pi, 8):
                got = raycast(w, (cx, cy), float(bearing), 20.0)
                want = raymarch_oracle(w, (cx, cy), float(bearing), 20.0)
                if math.isinf(want):
                    assert math.isinf(got)
                else:
                    assert abs(got - want) < 2e-3

    def test_rotation_symmetry(self):
        rng = np.random.default_rng(4)
        base = square_room()
        for _ in range(50):
            rot = rng.uniform(-math.pi, math.pi)
            c, s = math.cos(rot), math.sin(rot)
            r = np.array([[c, -s], [s, c]])
            rotated = make_world([(float((r @ seg[0])[0]), float((r @ seg[0])[1]),
                                   float((r @ seg[1])[0]), float((r @ seg[1])[1]))
                                  for seg in base.segments])
            bearing = rng.uniform(-math.pi, math.pi)
            r0 = raycast(base, (0, 0), bearing, 100.0)
            r1 = raycast(rotated, (0, 0), bearing + rot, 100.0)
            assert abs(r0 - r1) < 1e-9

    def test_range_limits(self):
        w = square_room()
        rng = np.random.default_rng(17)
        bearings = rng.uniform(-math.pi, math.pi, 500)
        ranges = raycast_batch(w, (1.0, -2.0), bearings, 6.0)
        finite = ranges[np.isfinite(ranges)]
        assert (finite >= 0).all()
        assert (finite <= 6.0).all()

    def test_too_short_max_range_misses(self):
        assert raycast(square_room(), (0, 0), 0.0, 4.0) == MISS

    def test_glass_transmission(self):
        segs = [(2.0, -5.0, 2.0, 5.0), (4.0, -5.0, 4.0, 5.0)]
        w = make_world(segs, transmission=[0.5, 0.0])
        # deterministic path treats glass as opaque
        assert raycast(w, (0, 0), 0.0, 100.0) == pytest.approx(2.0)
        rng = np.random.default_rng(0)
        hits = np.array([raycast(w, (0, 0), 0.0, 100.0, rng) for _ in range(2000)])
        frac_through = (hits > 3.0).mean()
        assert 0.45 < frac_through < 0.55
        assert set(np.round(hits, 6)) <= {2.0, 4.0}


class TestLoadWorld:
    def test_rect_expands_to_four_segments(self):
        w = load_world("[world]\nrect = [[0.0, 0.0, 10.0, 10.0]]\n")
        assert w.n_segments == 4

    def test_empty_world_is_valid(self):
        w = load_world("[world]\nsegment = []\n")
        assert w.n_segments == 0
        assert raycast(w, (0, 0), 0.3, 50.0) == MISS

    def test_malformed_number_names_field(self):
        with pytest.raises(WorldFormatError, match=r"world\.segment\[0\]"):
            load_world('[world]\nsegment = [[0.0, 0.0, "oops", 1.0]]\n')

    def test_parse_error_carries_line(self):
        with pytest.raises(WorldFormatError, match=r"line 2"):
            load_world("[world]\nsegment = [[0, 0 1, 2]]\n")

    def test_zero_length_segment_rejected(self):
        with pytest.raises(WorldFormatError, match="zero length"):
            load_world("[world]\nsegment = [[1.0, 2.0, 1.0, 2.0]]\n")

    def test_glass_transmission_range_checked(self):
        with pytest.raises(WorldFormatError, match="transmission"):
            load_world("[world]\nglass = [[0.0, 0.0, 1.0, 0.0, 1.5]]\n")


class TestOccupancyGrid:
    def test_log_odds_clamped(self):
        g = OccupancyGrid(0.1, 4, 4)
        g.add_log_odds(np.array([0]), np.array([0]), 100.0)
        g.add_log_odds(np.array([1]), np.array([1]), -100.0)
        assert g.cells[0, 0] == 4.0
        assert g.cells[1, 1] == -4.0

    def test_probability_formula(self):
        g = OccupancyGrid(0.1, 2, 2)
        g.cells[:] = [[0.0, 4.0], [-4.0, 1.0]]
        p = g.probabilities()
        assert p[0, 0] == pytest.approx(0.5)
        assert p[0, 1] == pytest.approx(1 - 1 / (1 + math.exp(4.0)))
        assert p[1, 0] == pytest.approx(1 - 1 / (1 + math.exp(-4.0)))

    def test_world_cell_round_trip(self):
        g = OccupancyGrid(0.5, 10, 8, Pose2D(-2.0, 1.0, 0.0))
        rows, cols = g.world_to_cell(np.array([-1.99, 1.01]))
        assert (rows, cols) == (0, 0)
        center = g.cell_center(np.array([0]), np.array([0]))
        np.testing.assert_allclose(center, [[-1.75, 1.25]])

    def test_rasterize_marks_wall_cells(self):
        w = square_room(2.0)
        g = rasterize_world(w, 0.1, padding=0.5)
        probs = g.probabilities()
        rows, cols = g.world_to_cell(np.array([[0.0, 2.0], [2.0, 0.0], [0.0, 0.0]]))
        assert probs[rows[0], cols[0]] > 0.9   # on the top wall
        assert probs[rows[1], cols[1]] > 0.9   # on the right wall
        assert probs[rows[2], cols[2]] == pytest.approx(0.5)  # interior unknown
