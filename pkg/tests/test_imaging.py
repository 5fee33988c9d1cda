import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import scenario
from oracles import extreme_points, point_in_convex, shoelace_area
from synids.capture import PacketMeta, featurize, group_sessions
from synids.errors import EmptyInput
from synids.imaging import (
    DDOS,
    LEGITIMATE,
    CanvasCalibration,
    SessionImageFrame,
    SessionPolygon,
    blank_canvas,
    composite_over,
    convex_hull,
    diff_stream,
    frame_count,
    frame_stream,
    load_frame_pixels,
    rasterize,
    read_manifest,
    session_color,
    session_hue,
    write_frames,
)
from synids.projection import default_basis, project_point
from synids.traffic_synth import generate

UNIT = CanvasCalibration(0.0, 1.0, 0.0, 1.0, 100, 100)


def test_hull_examples():
    tri = convex_hull([(0, 0), (0, 1), (1, 0)])
    assert set(tri) == {(0, 0), (1, 0), (0, 1)} and shoelace_area(tri) > 0
    sq = convex_hull([(0, 0), (2, 0), (2, 2), (0, 2), (1, 1)])
    assert set(sq) == {(0, 0), (2, 0), (2, 2), (0, 2)}
    assert convex_hull([(3, 3), (3, 3)]) == [(3, 3)]
    assert convex_hull([(0, 0), (1, 1), (2, 2)]) == [(0, 0), (2, 2)]
    with pytest.raises(EmptyInput):
        convex_hull([])


@given(st.lists(st.tuples(st.integers(-20, 20), st.integers(-20, 20)), min_size=1, max_size=25))
def test_hull_contains_all_and_matches_oracle(points):
    hull = convex_hull(points)
    assert set(hull) == {(float(x), float(y)) for x, y in extreme_points(points)}
    assert all(point_in_convex(p, hull) for p in points)
    if len(hull) >= 3:
        assert shoelace_area(hull) > 0


def test_session_color_examples():
    assert session_color(0) == (230, 46, 46, 128)
    assert session_color(12345) == session_color(12345)
    step = (session_hue(2) - session_hue(1)) % 1.0
    assert abs(step - (session_hue(1) - session_hue(0)) % 1.0) < 1e-12
    assert abs(step - 0.6180339887498949) < 1e-12


def test_composite_over_half_red():
    out = composite_over(blank_canvas(2, 2), (255, 0, 0, 128))
    assert out[..., :3].tolist() == [[[128, 0, 0]] * 2] * 2 and (out[..., 3] == 255).all()


def frame_of(size=100):
    return SessionImageFrame(blank_canvas(size, size), 0, 1)


def test_full_canvas_square_opaque():
    frame = frame_of()
    poly = SessionPolygon(1, [(0, 0), (1, 0), (1, 1), (0, 1)], (10, 200, 30, 255))
    rasterize(frame, poly, UNIT)
    assert (frame.pixels == (10, 200, 30, 255)).all()


@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=3, max_size=3))
def test_triangle_fill_matches_area(tri):
    hull = convex_hull(tri)
    px_area = abs(shoelace_area([(x * 99, y * 99) for x, y in hull])) if len(hull) == 3 else 0.0
    if px_area < 400:
        return
    frame = frame_of()
    rasterize(frame, SessionPolygon(0, hull, (255, 255, 255, 255)), UNIT)
    filled = int((frame.pixels[..., 0] == 255).sum())
    # pixel-centre sampling error is bounded by the perimeter
    perim = sum(np.hypot(x1 - x0, y1 - y0) * 99
                for (x0, y0), (x1, y1) in zip(hull, hull[1:] + hull[:1]))
    assert abs(filled - px_area) <= max(0.02 * px_area, perim + 3)


def test_triangle_fixture_within_two_percent():
    hull = convex_hull([(0.1, 0.1), (0.9, 0.2), (0.4, 0.85)])
    frame = frame_of(1000)
    cal = CanvasCalibration(0, 1, 0, 1, 1000, 1000)
    rasterize(frame, SessionPolygon(0, hull, (255, 255, 255, 255)), cal)
    area = abs(shoelace_area([(x * 999, y * 999) for x, y in hull]))
    assert abs((frame.pixels[..., 0] == 255).sum() - area) <= 0.02 * area


def test_degenerate_polygons_still_draw():
    for hull in ([(0.5, 0.5)], [(0.1, 0.1), (0.9, 0.9)]):
        frame = frame_of()
        rasterize(frame, SessionPolygon(0, hull, (255, 255, 255, 255)), UNIT)
        assert (frame.pixels[..., 0] == 255).sum() > 0


def test_calibration_corners():
    cal = CanvasCalibration.from_basis(default_basis(10), 300)
    px = cal.to_pixel([(cal.u_min, cal.v_min), (cal.u_max, cal.v_max)])
    assert np.allclose(px, [(0, 0), (299, 299)])


def pkt(t, sport=40000):
    return PacketMeta(0, t, 0, 0x0A000001, 0x0A000002, sport, 80, 60, 6, 2, 0, 0)


def test_one_short_session_one_frame():
    sessions = group_sessions([pkt(0), pkt(1_500_000), pkt(3_000_000)])
    frames = list(frame_stream(sessions, default_basis(10), UNIT, 5.0))
    assert len(frames) == 1 and len(frames[0].polygons) == 1


def test_frame_count_seventeen_minutes():
    assert frame_count(0, 17 * 60 * 1_000_000, 5_000_000) == 204


def test_straddling_session_split_per_window():
    times = [1_000_000, 4_000_000, 6_000_000, 9_000_000, 12_000_000]
    sizes = [60, 400, 900, 1200, 1500]
    packets = [PacketMeta(0, t, 0, 0x0A000001, 0x0A000002, 40000, 80, n, 6, 2, 0, 0)
               for t, n in zip(times, sizes)]
    (session,) = group_sessions(packets)
    basis = default_basis(10)
    frames = list(frame_stream([session], basis, UNIT, 5.0, start_us=0))
    assert len(frames) == 3
    for w, frame in enumerate(frames):
        # scalar reference: a packet belongs to window floor(t / 5 s)
        members = [p for p in packets if p.timestamp // 5_000_000 == w]
        expected = convex_hull([project_point(featurize(p), basis) for p in members])
        (poly,) = frame.polygons
        assert np.allclose(poly.hull, expected, rtol=0, atol=1e-12)


def test_frame_labels_follow_truth():
    sessions = group_sessions([pkt(t) for t in range(0, 20_000_000, 1_000_000)])
    truth = [(6_000_000, 8_000_000)]
    frames = list(frame_stream(sessions, default_basis(10), UNIT, 5.0, truth=truth, start_us=0))
    assert [f.label for f in frames] == [LEGITIMATE, DDOS, LEGITIMATE, LEGITIMATE]


def test_diff_stream_and_files(tmp_path):
    packets, truth = generate(scenario(seed=3, duration=12))
    cal = CanvasCalibration.from_basis(default_basis(10), 120)
    frames = list(frame_stream(group_sessions(packets), default_basis(10), cal, 5.0, truth=truth))
    diffs = list(diff_stream(frames))
    assert (diffs[0].pixels[..., :3] == frames[0].pixels[..., :3]).all()
    expect = np.abs(frames[1].pixels.astype(int) - frames[0].pixels.astype(int))[..., :3]
    assert (diffs[1].pixels[..., :3] == expect).all() and (diffs[1].pixels[..., 3] == 255).all()
    rows = write_frames(frames, str(tmp_path))
    assert read_manifest(str(tmp_path / "frames.jsonl")) == rows
    back = load_frame_pixels(str(tmp_path / rows[0]["file"]))
    assert (back == frames[0].pixels).all()


def test_frame_stream_deterministic():
    packets, _ = generate(scenario(seed=5, duration=10))
    cal = CanvasCalibration.from_basis(default_basis(10), 100)
    one = [f.pixels.tobytes() for f in frame_stream(group_sessions(packets), default_basis(10), cal)]
    two = [f.pixels.tobytes() for f in frame_stream(group_sessions(packets), default_basis(10), cal)]
    assert one == two
