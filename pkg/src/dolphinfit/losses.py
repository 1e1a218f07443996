"""Loss terms, the vertical-drift heuristic and weighted aggregation."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .body import forward_vector


@dataclass(frozen=True)
class LossWeights:
    rgb: float = 1.0
    mask: float = 1.0
    pose: float = 2.0
    scale: float = 0.001
    scale_axes: float = 0.1
    scale_smooth: float = 5.0
    smooth_pos: float = 500.0
    smooth_rot: float = 500.0
    smooth_pose: float = 500.0
    dir: float = 0.1

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not v >= 0:
                raise ValueError(f"loss weight {k} must be nonnegative")


TERMS = tuple(LossWeights.__dataclass_fields__)


def _same_shape(a, b, what: str) -> None:
    if ad.value_of(a).shape != ad.value_of(b).shape:
        raise ValueError(f"{what}: dimension mismatch {ad.value_of(a).shape} vs {ad.value_of(b).shape}")


def loss_rgb(rendered, observed, coverage) -> ad.Var:
    """Squared color error summed over covered pixels.

    All three arguments are dense (H, W, 3) / (H, W) rasters or, in the
    sparse form used by the optimizer, per-covered-pixel rows.
    """
    _same_shape(rendered, observed, "loss_rgb")
    cov = ad.value_of(coverage)
    if cov.shape != ad.value_of(rendered).shape[:-1]:
        raise ValueError("loss_rgb: coverage does not match the raster")
    diff = (rendered - ad.value_of(observed)) * cov[..., None]
    return ad.vsum(diff * diff)


def loss_mask_iou(soft, observed) -> ad.Var:
    """``1 - sum(soft*obs) / sum(soft + obs - soft*obs)``; 0 for two empty masks."""
    _same_shape(soft, observed, "loss_mask_iou")
    obs = ad.value_of(observed)
    inter = ad.vsum(soft * obs)
    union = ad.vsum(soft) + float(obs.sum()) - inter
    if union.value <= 0:
        return ad.vsum(soft) * 0.0
    return 1.0 - inter / union


def sparse_mask_iou(soft, soft_pix: np.ndarray, observed: np.ndarray) -> ad.Var:
    """IoU loss when the soft mask is only stored on ``soft_pix`` (flat
    indices); the soft value is 0 everywhere else."""
    obs = np.asarray(observed, dtype=np.float64).ravel()
    obs_total = float(obs.sum())
    if soft is None or len(soft_pix) == 0:
        return ad.const(1.0 if obs_total > 0 else 0.0)
    inter = ad.vsum(soft * obs[soft_pix])
    union = ad.vsum(soft) + obs_total - inter
    if union.value <= 0:
        return ad.vsum(soft) * 0.0
    return 1.0 - inter / union


def loss_pose(theta) -> ad.Var:
    """Squared norm of joint rotations; the global orientation row is excluded."""
    th = theta if isinstance(theta, ad.Var) else ad.const(theta)
    joints = th[..., 1:, :]
    return ad.vsum(joints * joints)


def loss_scale(beta) -> ad.Var:
    b = beta if isinstance(beta, ad.Var) else ad.const(beta)
    return ad.vsum(b * b)


def loss_scale_axes(beta) -> ad.Var:
    b = beta if isinstance(beta, ad.Var) else ad.const(beta)
    xy = b[:, 1] - b[:, 2]
    yz = b[:, 2] - b[:, 3]
    return ad.vsum(xy * xy) + ad.vsum(yz * yz)


def loss_scale_smooth(beta, group_parent: np.ndarray) -> ad.Var:
    """Squared difference of each non-root group's row to its parent's."""
    b = beta if isinstance(beta, ad.Var) else ad.const(beta)
    group_parent = np.asarray(group_parent)
    child = np.flatnonzero(group_parent >= 0)
    if len(child) == 0:
        return ad.vsum(b) * 0.0
    d = ad.take(b, child) - ad.take(b, group_parent[child])
    return ad.vsum(d * d)


def loss_smooth_temporal(series) -> ad.Var:
    """Mean over adjacent-frame gaps of the squared difference norm."""
    x = series if isinstance(series, ad.Var) else ad.const(series)
    T = x.shape[0]
    if T < 2:
        return ad.vsum(x) * 0.0
    d = x[1:] - x[:-1]
    return ad.vsum(d * d) * (1.0 / (T - 1))


def loss_direction(theta_root, P, min_step: float = 1e-6) -> ad.Var:
    """Sum over moving frames of ``1 - cos`` between the rotated forward
    axis and the normalized frame-to-frame displacement.

    ``theta_root`` is (T, 3), the global orientation per frame.
    """
    Pv = P if isinstance(P, ad.Var) else ad.const(P)
    th = theta_root if isinstance(theta_root, ad.Var) else ad.const(theta_root)
    T = Pv.shape[0]
    if T < 2:
        return ad.vsum(Pv) * 0.0
    dP = Pv[1:] - Pv[:-1]
    step = np.linalg.norm(dP.value, axis=1)
    moving = np.flatnonzero(step >= min_step)
    if len(moving) == 0:
        return ad.vsum(Pv) * 0.0
    d = ad.take(dP, moving)
    unit = d / ad.reshape(ad.norm(d, axis=1), (-1, 1))
    fwd = forward_vector(ad.take(th, moving + 1))
    return ad.vsum(1.0 - ad.vsum(fwd * unit, axis=1))


def vertical_drift(theta_root, frame_rate: float, v_surf: float = 6.6, v_dive: float = 2.2, level: float = 1e-3) -> float:
    """Height change for one frame from its orientation: rising while the
    forward axis points up, sinking while it points down."""
    up = float(forward_vector(np.asarray(theta_root, dtype=np.float64)).value[1])
    if up > level:
        return v_surf / frame_rate
    if up < -level:
        return -v_dive / frame_rate
    return 0.0


def drift_offsets(theta_root: np.ndarray, frame_rate: float, v_surf: float = 6.6, v_dive: float = 2.2, level: float = 1e-3) -> np.ndarray:
    """Per-frame height adjustments along a clip, one ``vertical_drift`` each.

    The offsets are not accumulated over frames and are recomputed from the
    current orientations before every epoch, so they never compound.
    """
    return np.array([vertical_drift(t, frame_rate, v_surf, v_dive, level) for t in theta_root])


def total_loss(terms: dict, weights: LossWeights) -> tuple[ad.Var, dict[str, float]]:
    """Weighted sum of the named terms; returns the total and a breakdown of
    raw and weighted values."""
    w = asdict(weights)
    total = None
    log: dict[str, float] = {}
    for name, term in terms.items():
        if name not in w:
            raise KeyError(f"unknown loss term {name!r}")
        val = float(np.sum(ad.value_of(term)))
        if not np.isfinite(val):
            raise FloatingPointError(f"non-finite loss term {name!r}")
        weighted = term * w[name] if isinstance(term, ad.Var) else ad.const(val * w[name])
        log[name] = val
        log[f"w_{name}"] = val * w[name]
        total = weighted if total is None else total + weighted
    if total is None:
        total = ad.const(0.0)
    log["total"] = float(total.value)
    return total, log
