import json

import numpy as np
import pytest
from PIL import Image
from scipy.spatial.transform import Rotation

from dolphinfit.config import RunConfig
from dolphinfit.pipeline import SceneRecord, load_record, load_sequence, render_record, run_reconstruction, to_png
from dolphinfit.synth import (
    SceneSpec, SpecError, albedo_texture, compare_recovery, generate_scene, ground_truth, random_beta,
    render_observation, trajectory,
)
from dolphinfit.template import default_template

TEMPLATE = default_template()


def small_spec(**kw):
    base = dict(T=3, altitude=6.0, resolution=(96, 64), albedo_resolution=(64, 64), heading=0.3, start=(0.0, -0.3))
    base.update(kw)
    return SceneSpec(**base)


def test_spec_validation():
    with pytest.raises(SpecError):
        SceneSpec(T=0)
    with pytest.raises(SpecError):
        SceneSpec(T=2, altitude=[5.0, -1.0])
    with pytest.raises(SpecError):
        SceneSpec(mask_flip=1.5)
    with pytest.raises(SpecError, match="unknown scene spec key"):
        SceneSpec.from_dict({"TT": 3})


def test_generate_layout(tmp_path):
    generate_scene(small_spec(), TEMPLATE, tmp_path)
    for name in ("altitude.csv", "camera.json", "groundtruth.json", "spec.json"):
        assert (tmp_path / name).is_file()
    assert sorted(p.name for p in (tmp_path / "frames").iterdir()) == ["000000.png", "000001.png", "000002.png"]
    obs = load_sequence(tmp_path)
    assert obs.T == 3 and obs.resolution == (96, 64)


def test_zero_noise_frame_is_reproducible(tmp_path):
    spec = small_spec(T=1)
    record = generate_scene(spec, TEMPLATE, tmp_path)
    image, mask = render_observation(record, TEMPLATE, 0, spec.background)
    np.testing.assert_array_equal(np.asarray(Image.open(tmp_path / "frames" / "000000.png")), to_png(image))
    np.testing.assert_array_equal(np.asarray(Image.open(tmp_path / "masks" / "000000.png")) > 127, mask)


def test_identical_spec_gives_identical_files(tmp_path):
    spec = small_spec(mask_flip=0.01, image_sigma=0.02, seed=4)
    generate_scene(spec, TEMPLATE, tmp_path / "a")
    generate_scene(spec, TEMPLATE, tmp_path / "b")
    for sub in ("frames", "masks"):
        for f in sorted((tmp_path / "a" / sub).iterdir()):
            assert f.read_bytes() == (tmp_path / "b" / sub / f.name).read_bytes()
    assert (tmp_path / "a" / "groundtruth.json").read_bytes() == (tmp_path / "b" / "groundtruth.json").read_bytes()


def test_mask_flip_rate(tmp_path):
    spec = small_spec(T=2, resolution=(240, 160), seed=9)
    generate_scene(spec, TEMPLATE, tmp_path / "clean")
    generate_scene(SceneSpec(**{**spec.to_dict(), "mask_flip": 0.01}), TEMPLATE, tmp_path / "noisy")
    clean = load_sequence(tmp_path / "clean").masks
    noisy = load_sequence(tmp_path / "noisy").masks
    rate = (clean != noisy).mean()
    assert rate == pytest.approx(0.01, abs=0.002)


def test_trajectory_roundtrip(tmp_path):
    spec = small_spec(T=6, fluke_amplitude=0.3, fluke_frequency=2.0)
    record = generate_scene(spec, TEMPLATE, tmp_path)
    theta, _ = trajectory(spec, TEMPLATE)
    np.testing.assert_array_equal(load_record(tmp_path / "groundtruth.json").params["theta"], theta)
    np.testing.assert_array_equal(record.params["theta"], theta)
    reloaded = SceneSpec.load(tmp_path / "spec.json")
    assert reloaded == SceneSpec.from_dict(json.loads((tmp_path / "spec.json").read_text()))


def test_fluke_sinusoid():
    spec = small_spec(T=10, fluke_amplitude=0.3, fluke_frequency=2.0)
    theta, P = trajectory(spec, TEMPLATE)
    g = list(TEMPLATE.tree.group_names).index("fluke")
    t = np.arange(10) / spec.frame_rate
    np.testing.assert_allclose(theta[:, g, 0], 0.3 * np.sin(2 * np.pi * 2.0 * t - np.pi / 4), atol=1e-15)
    steps = np.linalg.norm(np.diff(P, axis=0), axis=1)
    np.testing.assert_allclose(steps, spec.speed / spec.frame_rate, rtol=1e-12)


def test_random_beta_bounds():
    b = random_beta(TEMPLATE, np.random.default_rng(0))
    assert b.shape == (TEMPLATE.n_groups, 4)
    assert np.abs(b[:, 0]).max() <= 0.2 and (b[:, 1:] == 0).all()


@pytest.mark.parametrize("pattern", ["constant", "stripes", "spots"])
def test_albedo_patterns_in_range(pattern):
    tex = albedo_texture(pattern, (32, 32), seed=1)
    assert tex.shape == (32, 32) and tex.min() >= 0 and tex.max() <= 1


def test_compare_identity():
    gt = ground_truth(small_spec(), TEMPLATE)
    rep = compare_recovery(gt, gt, TEMPLATE)
    assert rep.volume_rel_error == 0.0 and rep.trajectory_rmse == 0.0 and rep.orientation_error == 0.0
    assert rep.mean_iou == 1.0


def test_compare_constant_offset():
    gt = ground_truth(small_spec(), TEMPLATE)
    est = SceneRecord({**gt.params, "P": gt.params["P"] + [0.1, 0.0, 0.0]}, gt.altitudes, gt.sensor_width,
                      gt.focal_length, gt.frame_rate, gt.resolution)
    assert compare_recovery(gt, est, TEMPLATE).trajectory_rmse == pytest.approx(0.1, abs=1e-12)


def _oracle_iou(record_a, record_b, t):
    a = render_record(record_a, TEMPLATE, t)[0].hard_mask > 0.5
    b = render_record(record_b, TEMPLATE, t)[0].hard_mask > 0.5
    return (a & b).sum() / (a | b).sum()


def test_compare_matches_independent_metrics():
    rng = np.random.default_rng(3)
    gt = ground_truth(small_spec(beta=random_beta(TEMPLATE, rng).tolist()), TEMPLATE)
    p = {k: v.copy() for k, v in gt.params.items()}
    p["beta"][:, 0] += rng.normal(0, 0.05, TEMPLATE.n_groups)
    p["P"] += rng.normal(0, 0.05, p["P"].shape)
    p["theta"][:, 0] += rng.normal(0, 0.1, (gt.T, 3))
    est = SceneRecord(p, gt.altitudes, gt.sensor_width, gt.focal_length, gt.frame_rate, gt.resolution)
    rep = compare_recovery(gt, est, TEMPLATE)
    rmse = np.sqrt(np.mean([np.dot(a - b, a - b) for a, b in zip(p["P"], gt.params["P"])]))
    ra = Rotation.from_rotvec(gt.params["theta"][:, 0])
    rb = Rotation.from_rotvec(p["theta"][:, 0])
    ang = np.mean((ra.inv() * rb).magnitude())
    assert rep.trajectory_rmse == pytest.approx(rmse, abs=1e-9)
    assert rep.orientation_error == pytest.approx(ang, abs=1e-9)
    assert rep.mean_iou == pytest.approx(np.mean([_oracle_iou(gt, est, t) for t in range(gt.T)]), abs=1e-9)
    from dolphinfit.body import shaped_mesh
    from dolphinfit.morpho import mesh_volume

    v_gt = mesh_volume(shaped_mesh(TEMPLATE, gt.params["beta"])[0].value, TEMPLATE.faces)
    v_est = mesh_volume(shaped_mesh(TEMPLATE, p["beta"])[0].value, TEMPLATE.faces)
    assert rep.volume_rel_error == pytest.approx(abs(v_est - v_gt) / v_gt, abs=1e-9)


def test_compare_dimension_mismatch():
    gt = ground_truth(small_spec(), TEMPLATE)
    other = ground_truth(small_spec(T=4), TEMPLATE)
    with pytest.raises(ValueError, match="mismatch"):
        compare_recovery(gt, other, TEMPLATE)


def test_self_consistency_from_ground_truth(tmp_path):
    spec = small_spec(T=4)
    gt = generate_scene(spec, TEMPLATE, tmp_path)
    cfg = RunConfig(render_resolution=spec.resolution, albedo_resolution=spec.albedo_resolution, epochs=10)
    result = run_reconstruction(load_sequence(tmp_path), TEMPLATE, cfg, init=gt.params)
    totals = np.array([row["total"] for row in result.loss_log])
    assert (np.diff(totals) <= 1e-6).all(), f"loss trace from ground truth: {np.round(totals, 4).tolist()}"
