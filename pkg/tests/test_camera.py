import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pztrigger import camera
from pztrigger.errors import DataFormatError, EmptyImageError, InvalidArgument

QUIET = camera.GeneratorParams(pedestal_sigma=0.0)


@pytest.fixture(scope="module")
def g2():
    return camera.build_geometry(2)


@pytest.mark.parametrize("rings", [1, 2, 5, 11])
def test_pixel_count_and_symmetric_neighbors(rings):
    g = camera.build_geometry(rings)
    assert g.n_pixels == 3 * rings * (rings + 1) + 1
    for i, nb in enumerate(g.neighbors):
        assert 3 <= len(nb) <= 6
        for j in nb:
            assert i in g.neighbors[j]
            d = np.linalg.norm(g.pixel_positions[i] - g.pixel_positions[j])
            assert d == pytest.approx(g.pixel_pitch)
    assert len(g.neighbors[0]) == 6


def test_one_ring_layout():
    g = camera.build_geometry(1)
    assert g.n_pixels == 7
    assert np.all(g.pixel_positions[0] == 0)
    assert np.allclose(np.linalg.norm(g.pixel_positions[1:], axis=1), 1.0)


def test_ring_two_corners_have_three_neighbors(g2):
    counts = [len(nb) for nb in g2.neighbors]
    corners = [i for i in range(7, 19) if g2.radius_sq_units()[i] == 4]
    assert len(corners) == 6
    assert all(counts[i] == 3 for i in corners)


def test_neighbors_match_brute_force(g2):
    pos = g2.pixel_positions
    for i in range(g2.n_pixels):
        d = np.linalg.norm(pos - pos[i], axis=1)
        expect = sorted(np.flatnonzero(np.abs(d - 1.0) < 1e-9).tolist())
        assert sorted(g2.neighbors[i]) == expect


def test_bad_rings_rejected():
    with pytest.raises(InvalidArgument):
        camera.build_geometry(0)
    with pytest.raises(InvalidArgument):
        camera.build_geometry(3, pixel_pitch=-1.0)


@pytest.mark.parametrize("steps", [1, 2, 3, 6])
def test_rotation_permutation_maps_centres(steps):
    g = camera.build_geometry(4)
    perm = camera.rotation_permutation(g, steps)
    assert sorted(perm.tolist()) == list(range(g.n_pixels))
    ang = math.radians(60 * steps)
    rot = np.array([[math.cos(ang), -math.sin(ang)], [math.sin(ang), math.cos(ang)]])
    moved = g.pixel_positions @ rot.T
    assert np.allclose(moved, g.pixel_positions[perm], atol=1e-12)
    if steps == 6:
        assert np.array_equal(perm, np.arange(g.n_pixels))


def test_disk_mapping(geom, mapping):
    assert np.all(mapping.rho <= 1.0)
    assert mapping.rho[0] == 0.0
    cover = mapping.pixel_weight.sum() / math.pi
    assert 0.7 < cover < 1.0
    g1 = camera.build_geometry(1)
    m1 = camera.map_to_unit_disk(g1)
    assert 0 < m1.rho[1:].max() < 1
    # the outer corner of the farthest pixel lands on the circle
    far = int(np.argmax(mapping.rho))
    corners = camera.hexagon_vertices(geom.pixel_positions[far], geom.pixel_circumradius)
    assert np.linalg.norm(corners, axis=1).max() * mapping.scale == pytest.approx(1.0)


def test_rotated_pixels_share_rho_exactly(geom, mapping):
    perm = camera.rotation_permutation(geom, 1)
    assert np.array_equal(mapping.rho[perm], mapping.rho)


def test_generator_is_deterministic(geom):
    a = camera.generate_event(camera.HADRON, camera.GeneratorParams(), 99, geom)
    b = camera.generate_event(camera.HADRON, camera.GeneratorParams(), 99, geom)
    assert a.pixel_phe.tobytes() == b.pixel_phe.tobytes()
    c = camera.generate_event(camera.HADRON, camera.GeneratorParams(), 100, geom)
    assert not np.array_equal(a.pixel_phe, c.pixel_phe)


def test_gamma_total_intensity(geom):
    params = camera.GeneratorParams(pedestal_sigma=0.0, gamma_size=(100.0, 100.0))
    for seed in range(10):
        ev = camera.generate_event(camera.GAMMA, params, seed, geom)
        assert abs(ev.pixel_phe.sum() - 100.0) <= 1.0


def test_generator_rejects_bad_label(geom):
    with pytest.raises(InvalidArgument):
        camera.generate_event("proton", QUIET, 1, geom)


def test_dataset_layout(geom):
    evs = camera.generate_dataset(3, 2, QUIET, 5, geom)
    assert [e.label for e in evs] == ["gamma"] * 3 + ["hadron"] * 2
    assert [e.event_id for e in evs] == list(range(5))


def test_hadrons_are_rounder_than_gammas(geom):
    def mean_ratio(label):
        ratios = []
        for seed in range(500):
            ev = camera.generate_event(label, QUIET, 7000 + seed, geom)
            h = camera.hillas(camera.clean_image(ev, geom, 0.0, 0.0), geom)
            if h.length > 0:
                ratios.append(h.width / h.length)
        return np.mean(ratios)

    assert mean_ratio(camera.HADRON) > mean_ratio(camera.GAMMA)


def test_cleaning_examples(g2):
    zero = camera.CherenkovImage(np.zeros(g2.n_pixels))
    assert not camera.clean_image(zero, g2).pixel_phe.any()

    pix = np.zeros(g2.n_pixels)
    pix[0] = 12.0
    pix[list(g2.neighbors[0])] = 6.0
    pix[g2.n_pixels - 1] = 6.0  # boundary level but far from the core
    out = camera.clean_image(camera.CherenkovImage(pix), g2).pixel_phe
    assert set(np.flatnonzero(out)) == {0, *g2.neighbors[0]}

    lone = np.zeros(g2.n_pixels)
    lone[4] = 7.0
    assert not camera.clean_image(camera.CherenkovImage(lone), g2).pixel_phe.any()


def test_cleaning_rejects_bad_thresholds(g2):
    img = camera.CherenkovImage(np.zeros(g2.n_pixels))
    with pytest.raises(InvalidArgument):
        camera.clean_image(img, g2, 5.0, 10.0)
    with pytest.raises(InvalidArgument):
        camera.clean_image(camera.CherenkovImage(np.zeros(3)), g2)


pixel_arrays = st.lists(st.floats(-5, 40, allow_nan=False), min_size=19, max_size=19)


@settings(max_examples=200, deadline=None)
@given(pixel_arrays)
def test_cleaning_is_idempotent(pix):
    g = camera.build_geometry(2)
    once = camera.clean_image(camera.CherenkovImage(np.array(pix)), g)
    twice = camera.clean_image(once, g)
    assert once.pixel_phe.tobytes() == twice.pixel_phe.tobytes()


@settings(max_examples=200, deadline=None)
@given(pixel_arrays, st.floats(0, 20), st.floats(0, 20), st.floats(0, 10), st.floats(0, 10))
def test_cleaning_is_monotone_in_thresholds(pix, c1, dc, b1, db):
    g = camera.build_geometry(2)
    b1 = min(b1, c1)
    img = camera.CherenkovImage(np.array(pix))
    lo = camera.clean_image(img, g, c1, b1).pixel_phe != 0
    c2 = c1 + dc
    b2 = min(b1 + db, c2)
    hi = camera.clean_image(img, g, c2, b2).pixel_phe != 0
    assert not np.any(hi & ~lo)


def test_hillas_examples(g2):
    pix = np.zeros(g2.n_pixels)
    pix[0] = 42.0
    h = camera.hillas(camera.CherenkovImage(pix), g2)
    assert (h.size, h.dist, h.length, h.width) == (42.0, 0.0, 0.0, 0.0)

    x = g2.pixel_positions[:, 0]
    y = g2.pixel_positions[:, 1]
    left = int(np.flatnonzero((np.abs(y) < 1e-12) & (np.abs(x + 1) < 1e-12))[0])
    right = int(np.flatnonzero((np.abs(y) < 1e-12) & (np.abs(x - 1) < 1e-12))[0])
    pix = np.zeros(g2.n_pixels)
    pix[[left, right]] = 5.0
    h = camera.hillas(camera.CherenkovImage(pix), g2)
    assert np.allclose(h.cog, 0.0, atol=1e-12)
    assert h.dist == pytest.approx(0.0, abs=1e-12)
    assert h.length == pytest.approx(1.0)
    assert h.width == pytest.approx(0.0, abs=1e-12)
    assert abs(h.psi) < 1e-12


def test_hillas_empty_image_raises(g2):
    with pytest.raises(EmptyImageError):
        camera.hillas(camera.CherenkovImage(np.zeros(g2.n_pixels)), g2)


def test_radial_blob_has_small_alpha(geom):
    params = camera.GeneratorParams(pedestal_sigma=0.0, gamma_alpha_sigma_deg=0.0)
    for seed in range(20):
        ev = camera.generate_event(camera.GAMMA, params, seed, geom)
        h = camera.hillas(ev, geom)
        if h.dist + 2 * h.length < 9:  # blob not truncated at the edge
            assert h.alpha < 2.0


def test_hillas_rotation_equivariance(geom):
    perm = camera.rotation_permutation(geom, 1)
    for ev in camera.generate_dataset(5, 5, QUIET, 21, geom):
        h0 = camera.hillas(ev, geom)
        rot = np.empty_like(ev.pixel_phe)
        rot[perm] = ev.pixel_phe
        h1 = camera.hillas(ev.with_pixels(rot), geom)
        for name in ("size", "length", "width", "dist", "alpha"):
            a, b = getattr(h0, name), getattr(h1, name)
            assert b == pytest.approx(a, rel=1e-9, abs=1e-9)
        c, s = math.cos(math.pi / 3), math.sin(math.pi / 3)
        expect = (c * h0.cog[0] - s * h0.cog[1], s * h0.cog[0] + c * h0.cog[1])
        assert np.allclose(h1.cog, expect, rtol=1e-9, atol=1e-9)
        dpsi = (h1.psi - h0.psi - math.pi / 3) % math.pi
        assert min(dpsi, math.pi - dpsi) < 1e-7


def test_hillas_invariants(geom):
    for ev in camera.generate_dataset(20, 20, camera.GeneratorParams(), 8, geom):
        c = camera.clean_image(ev, geom)
        if not c.pixel_phe.any():
            continue
        h = camera.hillas(c, geom)
        assert h.length >= h.width >= 0
        assert 0 <= h.alpha <= 90
        assert h.size >= 0


def test_geometry_json_round_trip(geom):
    text = camera.geometry_to_json(geom)
    back = camera.geometry_from_json(text)
    assert np.array_equal(back.pixel_positions, geom.pixel_positions)
    assert back.neighbors == geom.neighbors
    with pytest.raises(DataFormatError):
        camera.geometry_from_json('{"version": 2}')
    with pytest.raises(DataFormatError):
        camera.geometry_from_json("not json")


def test_event_file_round_trip(tmp_path, small_events):
    path = tmp_path / "ev.jsonl"
    small_events[0].label = None
    camera.write_events(path, small_events)
    back = camera.read_events(path)
    assert len(back) == len(small_events)
    for a, b in zip(small_events, back):
        assert a.pixel_phe.tobytes() == b.pixel_phe.tobytes()
        assert (a.label, a.event_id, a.seed) == (b.label, b.event_id, b.seed)
    small_events[0].label = camera.GAMMA


def test_event_file_errors(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"event_id": 0, "label": "muon", "pixels": [1.0]}\n')
    with pytest.raises(DataFormatError):
        camera.read_events(bad)
    bad.write_text('{"label": "gamma"}\n')
    with pytest.raises(DataFormatError):
        camera.read_events(bad)
