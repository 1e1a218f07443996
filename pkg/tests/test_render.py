import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dolphinfit import autodiff as ad
from dolphinfit.mesh import icosphere, unit_cube
from dolphinfit.render import (
    EmptyMaskError, apply_water_filter, backproject, camera_from_drone, default_lighting, init_position_from_mask,
    interpolate_missing, pixel_span, project, rasterize_soft, render_frame, sg_radiance,
)


def fov_oracle(gamma, omega):
    mpmath.mp.dps = 40
    return float(2 * mpmath.atan(mpmath.mpf(gamma) / (2 * mpmath.mpf(omega))))


def test_fov_matches_high_precision_oracle():
    cam = camera_from_drone(17.27, 12.29, 18.0)
    assert cam.fov == pytest.approx(fov_oracle(17.27, 12.29), abs=1e-15)
    assert np.degrees(cam.fov) == pytest.approx(70.184, abs=1e-3)


def test_fov_square_sensor():
    assert camera_from_drone(10.0, 5.0, 1.0).fov == pytest.approx(np.pi / 2, abs=1e-15)


def test_camera_position():
    np.testing.assert_array_equal(camera_from_drone(17.27, 12.29, 18.0).position, [0.0, 18.0, 0.0])


@pytest.mark.parametrize("args", [(0, 12.29, 18), (17.27, -1, 18), (17.27, 12.29, 0)])
def test_camera_rejects_nonpositive(args):
    with pytest.raises(ValueError):
        camera_from_drone(*args)


def test_project_on_axis_hits_principal_point():
    cam = camera_from_drone(17.27, 12.29, 18.0, (720, 480))
    uv, depth = project(cam, np.array([[0.0, 0.0, 0.0], [0.0, -2.0, 0.0]]))
    np.testing.assert_array_equal(uv.value, [[240.0, 360.0], [240.0, 360.0]])
    np.testing.assert_array_equal(depth.value, [18.0, 20.0])


def test_project_rejects_points_above_camera():
    cam = camera_from_drone(17.27, 12.29, 5.0)
    with pytest.raises(ValueError, match="camera height"):
        project(cam, np.array([[0.0, 5.0, 0.0]]))


def test_project_span_halves_with_double_height():
    bar = np.array([[-1.3, 0.0, 0.0], [1.3, 0.0, 0.0]])
    spans = []
    for h in (9.0, 18.0):
        uv = project(camera_from_drone(17.27, 12.29, h), bar)[0].value
        spans.append(uv[1, 0] - uv[0, 0])
    assert spans[1] / spans[0] == pytest.approx(0.5, rel=1e-12)


def _flat_bar(length=2.6, width=0.1, thickness=1e-3):
    v, f = unit_cube()
    v = (v - 0.5) * [length, thickness, width]
    v[:, 1] -= thickness / 2  # top face on the water plane
    return v, f


def _rendered_span(h, resolution=(720, 480)):
    cam = camera_from_drone(17.27, 12.29, h, resolution)
    v, f = _flat_bar()
    mask = rasterize_soft(cam, v, f).hard_mask > 0.5
    row = resolution[0] // 2
    covered = np.flatnonzero(mask[row])
    u = project(cam, np.array([[-1.3, 0.0, 0.0], [1.3, 0.0, 0.0]]))[0].value[:, 0]
    centers = np.arange(resolution[1]) + 0.5
    predicted_count = int(((centers > u[0]) & (centers < u[1])).sum())
    return len(covered), predicted_count, pixel_span(cam, 2.6)


def test_bar_span_at_18m():
    count, predicted_count, span = _rendered_span(18.0)
    assert span == pytest.approx(2.6 * 480 / (2 * 18.0 * np.tan(fov_oracle(17.27, 12.29) / 2)), rel=1e-12)
    assert abs(count - predicted_count) <= 0.5
    assert abs(count - span) < 1.0


def test_bar_span_at_survey_altitude():
    count, predicted_count, span = _rendered_span(18.43)
    assert abs(count - predicted_count) <= 0.5
    assert abs(count - span) < 1.0


@settings(max_examples=15, deadline=None)
@given(st.floats(10.0, 30.0))
def test_metric_soundness_over_altitudes(h):
    count, predicted_count, span = _rendered_span(h)
    assert abs(count - predicted_count) <= 0.5
    assert abs(count - span) < 1.0


def test_empty_mesh():
    cam = camera_from_drone(17.27, 12.29, 5.0, (16, 16))
    buf = rasterize_soft(cam, np.zeros((0, 3)), np.zeros((0, 3), dtype=int))
    assert (buf.soft_mask == 0).all()
    assert (buf.face_id == -1).all()


def test_viewport_filling_triangle():
    cam = camera_from_drone(17.27, 12.29, 2.0, (24, 24))
    v = np.array([[-20.0, 0.0, -20.0], [20.0, 0.0, -20.0], [0.0, 0.0, 40.0]])
    buf = rasterize_soft(cam, v, np.array([[0, 2, 1]]))
    assert (buf.soft_mask == 1.0).all()
    assert (buf.hard_mask == 1.0).all()


def _triangle_scene(resolution=(64, 64)):
    cam = camera_from_drone(17.27, 12.29, 4.0, resolution)
    v = np.array([[-0.9, 0.0, -0.7], [1.1, 0.0, -0.4], [0.1, 0.0, 1.05]])
    return cam, v, np.array([[0, 2, 1]])


def test_soft_mask_decays_outside_with_sigma():
    cam, v, f = _triangle_scene()
    buf = rasterize_soft(cam, v, f, inv_sigma=1000.0, box_length=0.2)
    soft, hard = buf.soft_mask, buf.hard_mask
    assert ((soft > 0) & (hard == 0)).any()
    assert soft[hard == 1].min() == 1.0
    assert soft[hard == 0].max() < 1.0


def test_soft_mask_converges_to_hard_coverage():
    cam, v, f = _triangle_scene()
    gaps = []
    for s in (1e3, 1e5, 1e7):
        buf = rasterize_soft(cam, v, f, inv_sigma=s, box_length=0.2)
        gaps.append(np.abs(buf.soft_mask - buf.hard_mask).sum())
    assert gaps[0] > gaps[1] > gaps[2]


def _supersampled_coverage(cam, v, f, factor=16):
    h, w = cam.resolution
    fine = camera_from_drone(cam.sensor_width, cam.focal_length, cam.altitude, (h * factor, w * factor))
    hard = rasterize_soft(fine, v, f).hard_mask
    return hard.reshape(h, factor, w, factor).mean(axis=(1, 3))


def test_soft_mask_agrees_with_supersampled_coverage():
    rng = np.random.default_rng(0)
    v, f = icosphere(1, radius=0.6)
    v = v * [1.4, 0.5, 0.8] + rng.normal(0, 0.03, v.shape) + [0.2, -0.6, -0.1]
    cam = camera_from_drone(17.27, 12.29, 4.0, (48, 48))
    soft = rasterize_soft(cam, v, f).soft_mask
    cover = _supersampled_coverage(cam, v, f)
    agree = (soft >= 0.5) == (cover >= 0.5)
    assert agree.mean() >= 0.99


def test_occlusion_picks_nearer_face():
    cam = camera_from_drone(17.27, 12.29, 4.0, (32, 32))
    low = [[-1.0, -1.0, -1.0], [1.0, -1.0, -1.0], [0.0, -1.0, 1.2]]
    high = [[-0.8, 0.5, -0.9], [1.2, 0.5, -0.6], [0.1, 0.5, 1.0]]
    v = np.array(low + high)
    f = np.array([[0, 2, 1], [3, 5, 4]])
    buf = rasterize_soft(cam, v, f)
    fid = buf.face_id
    high_only = rasterize_soft(cam, v, f[1:]).hard_mask > 0.5
    assert (fid[high_only] == 1).all()
    assert (fid[(fid >= 0) & ~high_only] == 0).all()


def test_sg_constant_light():
    n = ad.const(np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]]))
    out = sg_radiance(n, np.array([1.0]), np.array([[0.0, 0.0, 1.0]]), np.array([1e-12]))
    np.testing.assert_allclose(out.value, 1.0, atol=1e-11)


def test_sg_lobe_peak():
    mu = np.array([[0.0, 0.6, 0.8], [1.0, 0.0, 0.0]])
    out = sg_radiance(ad.const(mu[:1]), np.array([0.7, 0.0]), mu, np.array([5.0, 3.0]))
    assert out.value[0] == pytest.approx(0.7, abs=1e-9)


def test_sg_perpendicular_half_albedo():
    light = sg_radiance(ad.const(np.array([[1.0, 0.0, 0.0]])), np.array([1.0]), np.array([[0.0, 1.0, 0.0]]),
                        np.array([2.0])).value
    assert 0.5 * light[0] == pytest.approx(0.5 * np.exp(-2.0), abs=1e-15)
    assert round(0.5 * light[0], 5) == 0.06767


def _lit_sphere(albedo=0.5, lobes=None, resolution=(32, 32)):
    v, f = icosphere(2, radius=0.8)
    uv = np.stack([0.5 + 0.5 * v[:, 0] / 0.8, 0.5 + 0.5 * v[:, 2] / 0.8], axis=1)
    cam = camera_from_drone(17.27, 12.29, 3.0, resolution)
    app = {"albedo": np.full((8, 8), albedo), "F_water": np.zeros(3), **(lobes or default_lighting(9))}
    return cam, v, f, uv, app


def test_shade_constant_light_returns_albedo():
    lobes = {"sg_amplitude": np.array([1.0]), "sg_axis": np.array([[0.0, 1.0, 0.0]]),
             "sg_sharpness": np.array([1e-12])}
    cam, v, f, uv, app = _lit_sphere(albedo=0.37, lobes=lobes)
    buf = render_frame(cam, v + [0, 1.0, 0], f, uv, app)
    np.testing.assert_allclose(buf.color.value, 0.37, atol=1e-11)


def test_water_filter_examples():
    C = np.ones((1, 3))
    np.testing.assert_array_equal(apply_water_filter(C, np.array([-1.0]), np.zeros(3)).value, C)
    np.testing.assert_array_equal(apply_water_filter(C, np.array([0.3]), np.full(3, 0.5)).value, C)
    out = apply_water_filter(C, np.array([-1.0]), np.full(3, 0.5)).value
    np.testing.assert_allclose(out, np.exp(-0.5), rtol=1e-15)
    assert round(out[0, 0], 5) == 0.60653


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 0), st.floats(-5, 0), st.lists(st.floats(0, 1), min_size=3, max_size=3))
def test_water_filter_monotone_in_depth(d1, d2, f):
    C = np.full((2, 3), 0.8)
    out = apply_water_filter(C, np.array([d1, d2]), np.array(f)).value
    if abs(d1) <= abs(d2):
        assert (out[0] >= out[1]).all()
    else:
        assert (out[0] <= out[1]).all()
    assert (out <= C).all()


def test_buffer_invariants():
    cam, v, f, uv, app = _lit_sphere()
    app["F_water"] = np.array([0.4, 0.2, 0.1])
    buf = render_frame(cam, v - [0, 0.3, 0], f, uv, app)
    soft, hard = buf.soft_mask, buf.hard_mask
    assert (soft >= 0).all() and (soft <= 1).all()
    assert (soft[hard == 1] >= 1 - 1e-6).all()
    assert (buf.filtered.value <= buf.color.value).all()
    assert (buf.depth.value < 0.6).all()


def _fd_render(loss_name):
    v, f = icosphere(0, radius=0.9)
    assert len(f) == 20
    rng = np.random.default_rng(5)
    v = v + rng.normal(0, 0.05, v.shape) - [0, 0.5, 0]
    uv = np.clip(np.stack([0.5 + 0.4 * v[:, 0], 0.5 + 0.4 * v[:, 2]], axis=1), 0, 1)
    cam = camera_from_drone(17.27, 12.29, 3.0, (32, 32))
    light = default_lighting(4)
    params = {"v": v, "F_water": np.array([0.3, 0.5, 0.2]), **light}
    albedo = rng.uniform(0.3, 0.8, (6, 6))

    def loss(p):
        app = {"albedo": albedo, "F_water": p["F_water"], "sg_amplitude": p["sg_amplitude"],
               "sg_axis": p["sg_axis"], "sg_sharpness": p["sg_sharpness"]}
        buf = render_frame(cam, p["v"], f, uv, app, inv_sigma=300.0, box_length=0.3, k=50)
        return ad.vsum(buf.soft) if loss_name == "soft" else ad.vsum(buf.filtered)

    return ad.finite_diff_check(loss, params, eps=1e-4)


@pytest.mark.parametrize("loss_name", ["soft", "color"])
def test_render_gradients_match_finite_differences(loss_name):
    assert _fd_render(loss_name) < 1e-3


def test_init_position_on_axis():
    cam = camera_from_drone(17.27, 12.29, 18.0, (72, 48))
    mask = np.zeros((72, 48), dtype=bool)
    mask[34:38, 22:26] = True
    np.testing.assert_allclose(init_position_from_mask(mask, cam), [0.0, 0.0, 0.0], atol=1e-15)


def test_init_position_offset():
    cam = camera_from_drone(17.27, 12.29, 18.0, (72, 48))
    mask = np.zeros((72, 48), dtype=bool)
    mask[34:38, 29:33] = True  # centroid 7 px right of the principal point
    expect = 7 * 2 * 18.0 * np.tan(fov_oracle(17.27, 12.29) / 2) / 48
    np.testing.assert_allclose(init_position_from_mask(mask, cam), [expect, 0.0, 0.0], atol=1e-12)


def test_backproject_inverts_project():
    cam = camera_from_drone(17.27, 12.29, 18.0)
    X = np.array([[1.3, -0.4, -2.2]])
    u, r = project(cam, X)[0].value[0]
    np.testing.assert_allclose(backproject(cam, u, r, -0.4), X[0], atol=1e-12)


def test_empty_mask_is_flagged():
    cam = camera_from_drone(17.27, 12.29, 18.0, (8, 8))
    with pytest.raises(EmptyMaskError):
        init_position_from_mask(np.zeros((8, 8)), cam)


def test_missing_frame_interpolated():
    P = np.array([[0.0, 0.0, 0.0], [9.0, 9.0, 9.0], [2.0, 0.0, 4.0]])
    out = interpolate_missing(P, np.array([True, False, True]))
    np.testing.assert_array_equal(out[1], [1.0, 0.0, 2.0])
    with pytest.raises(EmptyMaskError):
        interpolate_missing(P, np.zeros(3, dtype=bool))
