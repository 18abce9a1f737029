import numpy as np
import pytest
from hypothesis import given, strategies as st

from catheter3d.camera import project
from catheter3d.errors import InvalidConfig, OutOfFrame, ShapeMismatch
from catheter3d.reconstruct import triangulate
from catheter3d.simulate import (
    HelixSpec, RigidMotion, euler_rotation, generate_sequence, interframe_displacements, make_helix,
    render_frame, rigid_transform, rms3d_report,
)

motions = st.builds(
    RigidMotion,
    st.floats(-10, 10), st.floats(-10, 10), st.floats(-10, 10),
    st.tuples(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5)),
)


def test_helix_defaults():
    pts = make_helix()
    assert pts.shape == (30, 3)
    assert np.max(np.abs(pts.mean(axis=0))) < 1e-9


def test_helix_axis_tilt():
    spec = HelixSpec()
    assert np.degrees(np.arccos(spec.axis[2])) == pytest.approx(30.0)
    assert HelixSpec.tilted(30.0).axis == pytest.approx(spec.axis)


def test_helix_centre():
    pts = make_helix(HelixSpec(center_mm=(1.0, -2.0, 3.0)))
    assert np.allclose(pts.mean(axis=0), [1, -2, 3], atol=1e-9)


def test_two_point_helix_one_turn_separated_by_pitch():
    spec = HelixSpec(n_points=2, radius_mm=4.0, pitch_mm=7.0, turns=1.0)
    a, b = make_helix(spec)
    assert np.dot(b - a, spec.axis) == pytest.approx(7.0, abs=1e-12)
    assert np.linalg.norm(b - a) == pytest.approx(7.0, abs=1e-12)


@given(st.integers(3, 60), st.floats(0.5, 20), st.floats(0.5, 30), st.floats(0.25, 4))
def test_helix_spacing_closed_form(n, r, pitch, turns):
    spec = HelixSpec(n_points=n, radius_mm=r, pitch_mm=pitch, turns=turns)
    pts = make_helix(spec)
    dt = turns / (n - 1)  # turns between consecutive samples
    chord = np.sqrt((2 * r * np.sin(np.pi * dt)) ** 2 + (pitch * dt) ** 2)
    assert np.allclose(np.linalg.norm(np.diff(pts, axis=0), axis=1), chord, atol=1e-9)
    # the curve between samples has the analytic arc length; a fine polyline converges to it
    arc = np.sqrt((2 * np.pi * r) ** 2 + pitch ** 2) * dt
    fine = make_helix(HelixSpec(n_points=(n - 1) * 2000 + 1, radius_mm=r, pitch_mm=pitch, turns=turns))
    seg = np.linalg.norm(np.diff(fine, axis=0), axis=1)[:2000].sum()
    assert seg == pytest.approx(arc, rel=1e-5)


def test_helix_spec_validation():
    with pytest.raises(InvalidConfig):
        HelixSpec(n_points=1)
    with pytest.raises(InvalidConfig):
        HelixSpec(radius_mm=0)
    with pytest.raises(InvalidConfig):
        HelixSpec(axis=(0.0, 0.0, 2.0))


def test_identity_motion():
    pts = make_helix()
    assert np.array_equal(rigid_transform(pts, RigidMotion(0, 0, 0, (0, 0, 0))), pts)


def test_euler_order_is_zyx():
    Rz = euler_rotation(0, 0, 30)
    Ry = euler_rotation(0, 30, 0)
    Rx = euler_rotation(30, 0, 0)
    assert np.allclose(euler_rotation(30, 30, 30), Rz @ Ry @ Rx, atol=1e-15)
    assert np.allclose(Rz @ [1, 0, 0], [np.cos(np.pi / 6), np.sin(np.pi / 6), 0])


@given(motions)
def test_motion_twice_equals_composition(m):
    pts = make_helix()
    R, T = m.rotation, np.array(m.T_mm)
    twice = rigid_transform(rigid_transform(pts, m), m)
    oracle = pts @ (R @ R).T + (R @ T + T)
    assert np.max(np.abs(twice - oracle)) < 1e-10


@given(motions)
def test_rigid_preserves_distances(m):
    pts = make_helix()
    out = rigid_transform(pts, m)
    d0 = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    d1 = np.linalg.norm(out[:, None] - out[None], axis=2)
    assert np.max(np.abs(d0 - d1)) < 1e-9


def test_sequence_frames_and_truth():
    seq = generate_sequence(noise_mm=0.0)
    assert len(seq.frames) == 6
    truth = seq.truth()
    m = RigidMotion()
    for i in range(1, 6):
        assert np.allclose(truth[i], rigid_transform(truth[i - 1], m), atol=1e-12)
    for g in seq.gantries:
        assert np.allclose(seq.track(g.name)[3], project(g.projection(), truth[3]), atol=1e-12)


@pytest.mark.parametrize("scope", ["apriori", "all"])
def test_noise_bound(scope):
    seq = generate_sequence(noise_mm=2.0, seed=5, noise_scope=scope)
    for i, fr in enumerate(seq.frames):
        dev = np.abs(fr.noisy3d - fr.truth3d)
        assert dev.max() <= 2.0
        if scope == "apriori" and i:
            assert dev.max() == 0
    assert np.abs(seq.frames[0].noisy3d - seq.frames[0].truth3d).max() > 1.0


def test_scopes_share_frame_zero():
    a = generate_sequence(noise_mm=2.0, seed=9, noise_scope="apriori")
    b = generate_sequence(noise_mm=2.0, seed=9, noise_scope="all")
    assert np.array_equal(a.frames[0].noisy3d, b.frames[0].noisy3d)


def test_sequence_determinism():
    a = generate_sequence(noise_mm=2.0, seed=3)
    b = generate_sequence(noise_mm=2.0, seed=3)
    for fa, fb in zip(a.frames, b.frames):
        for v in a.views:
            assert fa.tracks[v].tobytes() == fb.tracks[v].tobytes()


def test_sequence_validation():
    with pytest.raises(InvalidConfig):
        generate_sequence(n_frames=1)
    with pytest.raises(InvalidConfig):
        generate_sequence(noise_scope="some")
    with pytest.raises(InvalidConfig):
        generate_sequence(noise_mm=-1)


def test_noiseless_tracks_triangulate_to_truth():
    seq = generate_sequence(noise_mm=0.0)
    ga, gb = seq.gantries
    for fr in seq.frames:
        tri = triangulate(ga.projection(), gb.projection(), fr.tracks[ga.name], fr.tracks[gb.name])
        assert np.max(np.abs(tri.points - fr.truth3d)) < 1e-6


def test_interframe_displacements_under_ten_pixels():
    seq = generate_sequence()
    for v in seq.views:
        d = interframe_displacements(seq, v)
        assert np.linalg.norm(d, axis=2).max() < 10


def test_render_single_disk_minimum():
    img = render_frame(np.array([[256.0, 256.0]]), noise_sigma=0.0, texture_amplitude=0.0)
    assert img.shape == (512, 512)
    v, u = np.unravel_index(np.argmin(img), img.shape)
    assert (u, v) == (256, 256)
    assert 0 <= img.min() and img.max() <= 1


def test_render_out_of_frame():
    with pytest.raises(OutOfFrame):
        render_frame(np.array([[600.0, 10.0]]))


def test_render_deterministic():
    t = np.array([[100.0, 120.0], [300.0, 310.0]])
    assert np.array_equal(render_frame(t, seed=4), render_frame(t, seed=4))
    assert not np.array_equal(render_frame(t, seed=4), render_frame(t, seed=5))


def test_rms_report_examples():
    t = [np.zeros((4, 3))]
    r = rms3d_report(t, t)
    assert r.as_row() == (0, 0, 0, 0)
    r = rms3d_report([np.array([[3.0, 4.0, 0.0]])], [np.zeros((1, 3))])
    assert r.as_row() == (5.0, 5.0, 5.0, 5.0)


def test_rms_accumulates_per_frame():
    est = [np.full((2, 3), 0.0), np.array([[1.0, 0, 0], [3.0, 0, 0]])]
    truth = [np.zeros((2, 3))] * 2
    r = rms3d_report(est, truth)
    assert r.rms_accumulated == pytest.approx(np.sqrt(5.0))
    assert r.min == 0 and r.max == 3


def test_rms_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        rms3d_report([np.zeros((2, 3))], [np.zeros((3, 3))])
