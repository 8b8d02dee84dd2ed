import numpy as np
import pytest

from deliverysim.geom import Pose2D
from deliverysim.mapio import (
    FREE_THRESH,
    OCCUPIED_THRESH,
    MapFormatError,
    grid_to_pixels,
    read_map,
    write_map,
)
from deliverysim.world import OccupancyGrid


def tri_state(grid):
    p = grid.probabilities()
    out = np.full(p.shape, "unknown", dtype=object)
    out[p >= OCCUPIED_THRESH] = "occupied"
    out[p <= FREE_THRESH] = "free"
    return out


def sample_grid():
    g = OccupancyGrid(0.05, 7, 5, Pose2D(-1.0, 2.0, 0.0))
    rng = np.random.default_rng(0)
    g.cells[:] = rng.uniform(-4, 4, (5, 7))
    return g


class TestRoundTrip:
    def test_tri_state_identical(self, tmp_path):
        g = sample_grid()
        pgm, _ = write_map(g, tmp_path / "m.pgm")
        back = read_map(pgm)
        assert back.width == g.width and back.height == g.height
        assert back.resolution == g.resolution
        assert back.origin == g.origin
        assert (tri_state(back) == tri_state(g)).all()

    def test_unknown_restored_as_zero_log_odds(self, tmp_path):
        g = OccupancyGrid(0.1, 3, 3)
        write_map(g, tmp_path / "m.pgm")
        back = read_map(tmp_path / "m.yaml")
        assert (back.cells == 0.0).all()

    def test_all_unknown_grid_is_all_205(self, tmp_path):
        g = OccupancyGrid(0.1, 4, 3)
        pgm, _ = write_map(g, tmp_path / "m.pgm")
        raster = pgm.read_bytes().split(b"255\n", 1)[1]
        assert raster == bytes([205] * 12)


class TestGoldenFile:
    def test_two_by_two_hand_encoded(self, tmp_path):
        # hand-encoded oracle: top row (occupied, free), bottom row
        # (unknown, occupied); the file stores the top image row first
        g = OccupancyGrid(0.1, 2, 2)
        g.cells[1, 0] = 3.0    # top-left: occupied
        g.cells[1, 1] = -3.0   # top-right: free
        g.cells[0, 0] = 0.0    # bottom-left: unknown
        g.cells[0, 1] = 3.0    # bottom-right: occupied
        pgm, yaml_path = write_map(g, tmp_path / "m.pgm")
        data = pgm.read_bytes()
        expected = b"P5\n2 2\n255\n" + bytes([0, 254, 205, 0])
        assert data == expected

    def test_pixel_order_helper(self):
        g = OccupancyGrid(0.1, 2, 2)
        g.cells[1, 0] = 3.0
        g.cells[1, 1] = -3.0
        g.cells[0, 1] = 3.0
        np.testing.assert_array_equal(grid_to_pixels(g),
                                      [[0, 254], [205, 0]])


class TestErrors:
    def test_missing_sidecar(self, tmp_path):
        (tmp_path / "m.pgm").write_bytes(b"P5\n1 1\n255\nx")
        with pytest.raises(MapFormatError, match="metadata"):
            read_map(tmp_path / "m.pgm")

    def test_bad_magic(self, tmp_path):
        g = OccupancyGrid(0.1, 2, 2)
        pgm, _ = write_map(g, tmp_path / "m.pgm")
        pgm.write_bytes(b"P2\n2 2\n255\n" + bytes(4))
        with pytest.raises(MapFormatError, match="magic"):
            read_map(tmp_path / "m.yaml")

    def test_dimension_mismatch(self, tmp_path):
        g = OccupancyGrid(0.1, 2, 2)
        pgm, _ = write_map(g, tmp_path / "m.pgm")
        pgm.write_bytes(b"P5\n2 2\n255\n" + bytes(3))  # one byte short
        with pytest.raises(MapFormatError, match="raster"):
            read_map(tmp_path / "m.yaml")

    def test_comments_in_header_ok(self, tmp_path):
        g = OccupancyGrid(0.1, 2, 2)
        pgm, _ = write_map(g, tmp_path / "m.pgm")
        raw = pgm.read_bytes()
        pgm.write_bytes(b"P5\n# made by hand\n2 2\n255\n" + raw.split(b"255\n", 1)[1])
        back = read_map(tmp_path / "m.yaml")
        assert back.width == 2
