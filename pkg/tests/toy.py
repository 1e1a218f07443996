"""Shared fixtures: a 3-frame toy scene on the 200-triangle two-part capsule."""

from __future__ import annotations

import numpy as np

from dolphinfit.config import RunConfig
from dolphinfit.pipeline import APPEARANCE_KEYS, PARAM_KEYS, Objective, Observations, SceneRecord, render_record
from dolphinfit.render import default_lighting
from dolphinfit.template import toy_template

# at 32 px across, one pixel is 2/32 = 0.0625 normalized units; this sigma
# spreads the soft edge over about one pixel and the box keeps every face
# within reach so no candidate enters or leaves the top-k set under a probe
TOY_CONFIG = RunConfig(
    render_resolution=(32, 32), albedo_resolution=(8, 8), inv_sigma=300.0, box_length=0.3, k=200,
    optimize_height=True, sg_lobes=3,
)


def toy_params(rng: np.random.Generator, T: int = 3, n_groups: int = 2) -> dict[str, np.ndarray]:
    t = np.arange(T)
    theta = rng.normal(0.0, 0.08, (T, n_groups, 3))
    theta[:, 0, 1] += 0.5
    P = np.stack([-0.15 + 0.12 * t, np.full(T, -0.3), 0.05 * t], axis=1) + rng.normal(0, 0.01, (T, 3))
    light = default_lighting(3)
    return {
        "theta": theta,
        "beta": rng.normal(0.0, 0.05, (n_groups, 4)),
        "P": P,
        "albedo": rng.uniform(0.3, 0.8, (8, 8)),
        "F_water": np.array([0.3, 0.2, 0.1]),
        "sg_amplitude": light["sg_amplitude"] * 1.5,
        "sg_axis": light["sg_axis"],
        "sg_sharpness": light["sg_sharpness"],
    }


def toy_scene(seed: int = 0):
    """Observed sequence rendered from one parameter set and a perturbed
    estimate to evaluate gradients at. Returns (template, obs, estimate, gt)."""
    rng = np.random.default_rng(seed)
    template = toy_template(n_rings=10)
    cfg = TOY_CONFIG
    gt = toy_params(rng)
    altitudes = np.array([2.5, 2.6, 2.7])
    record = SceneRecord(gt, altitudes, cfg.sensor_width, cfg.focal_length, 50.0, cfg.render_resolution)
    bg = np.broadcast_to(np.array([0.1, 0.3, 0.35]), cfg.render_resolution + (3,))
    frames, masks = [], []
    for t in range(3):
        buf, image = render_record(record, template, t, background=bg, inv_sigma=cfg.inv_sigma,
                                   box_length=cfg.box_length, k=cfg.k)
        frames.append(np.round(np.clip(image, 0, 1) * 255).astype(np.uint8))
        masks.append(buf.hard_mask > 0.5)
    obs = Observations(np.stack(frames), np.stack(masks), altitudes, cfg.sensor_width, cfg.focal_length, 50.0)
    est = {k: v.copy() for k, v in gt.items()}
    est["theta"] = est["theta"] + rng.normal(0, 0.03, est["theta"].shape)
    est["beta"] = est["beta"] + rng.normal(0, 0.03, est["beta"].shape)
    est["P"] = est["P"] + rng.normal(0, 0.02, est["P"].shape)
    est["albedo"] = np.clip(est["albedo"] + rng.normal(0, 0.1, est["albedo"].shape), 0.05, 0.95)
    est["F_water"] = est["F_water"] + 0.05
    est["sg_amplitude"] = est["sg_amplitude"] * 0.9
    est["sg_sharpness"] = est["sg_sharpness"] * 1.2
    est["sg_axis"] = est["sg_axis"] + rng.normal(0, 0.05, est["sg_axis"].shape)
    return template, obs, est, gt


def objective_gradient_errors(seed: int = 0, eps: float = 1e-4, n_texels: int = 16):
    """Relative error of every checked entry between the optimizer gradient
    and central differences of the logged total loss.

    Returns a dict mapping parameter name to an array of relative errors.
    """
    template, obs, est, _ = toy_scene(seed)
    cfg = TOY_CONFIG
    objective = Objective(obs, template, cfg, cfg.weights, np.ones(obs.T, dtype=bool))
    drift = np.zeros(obs.T)
    _, grads = objective(est, drift)

    def total(p):
        return objective(p, drift)[0]["total"]

    rng = np.random.default_rng(seed + 1)
    errors = {}
    for key in PARAM_KEYS:
        base = est[key]
        if key == "albedo":
            live = np.flatnonzero(np.abs(grads[key]).ravel() > 1e-8)
            idxs = rng.choice(live, size=min(n_texels, len(live)), replace=False)
        else:
            idxs = range(base.size)
        errs = []
        for i in idxs:
            plus = {k: v.copy() for k, v in est.items()}
            minus = {k: v.copy() for k, v in est.items()}
            plus[key].flat[i] += eps
            minus[key].flat[i] -= eps
            numeric = (total(plus) - total(minus)) / (2 * eps)
            analytic = grads[key].flat[i]
            scale = max(abs(analytic), abs(numeric))
            errs.append(0.0 if scale <= 1e-8 else abs(analytic - numeric) / scale)
        errors[key] = np.asarray(errs)
    return errors


__all__ = ["TOY_CONFIG", "APPEARANCE_KEYS", "toy_params", "toy_scene", "objective_gradient_errors"]
