"""Body volume, body condition, density and mass.

Two volume routes are provided: the enclosed volume of a reconstructed mesh
and the segmented elliptical model driven by 19 width (and height) samples
at 5% steps of body length.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mesh import MeshError, check_closed, signed_volume

SITES = np.arange(5, 100, 5)  # percent of BL
N_SITES = len(SITES)


class OutOfModelError(ValueError):
    """Density predicted by the mass model is not positive."""


@dataclass(frozen=True)
class MassModel:
    a0: float = -4.0206
    a1: float = 2.5929
    alpha: float = 1000.71  # kg/m^3
    beta: float = 278.12  # kg/m^3

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")


DEFAULT_MASS_MODEL = MassModel()


def mesh_volume(vertices, faces) -> float:
    """Enclosed volume of a closed triangle mesh (signed tetrahedra about the origin)."""
    faces = np.asarray(faces, dtype=np.int64)
    vertices = np.asarray(vertices, dtype=np.float64)
    check_closed(faces, len(vertices))
    return abs(signed_volume(vertices, faces))


def voxel_volume(vertices, faces, resolution: int = 256) -> float:
    """Volume by counting voxel centers inside the mesh on a
    ``resolution``^3 grid spanning the bounding box.

    Inside means nonzero winding number, accumulated along +z rays from the
    signed crossings of each triangle.
    """
    v = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    lo, hi = v.min(axis=0), v.max(axis=0)
    pad = 1e-3 * (hi - lo).max()
    lo, hi = lo - pad, hi + pad
    cell = (hi - lo) / resolution
    # slight irrational jitter keeps rays off mesh edges and vertices
    xs = lo[0] + (np.arange(resolution) + 0.5 + 1e-4 * np.sqrt(2)) * cell[0]
    ys = lo[1] + (np.arange(resolution) + 0.5 + 1e-4 * np.sqrt(3)) * cell[1]
    a, b, c = v[faces[:, 0]], v[faces[:, 1]], v[faces[:, 2]]
    nz = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    toggles = np.zeros((resolution, resolution, resolution + 1))
    for f in np.flatnonzero(nz != 0):
        tri = np.stack([a[f], b[f], c[f]])
        i = np.flatnonzero((xs >= tri[:, 0].min()) & (xs <= tri[:, 0].max()))
        j = np.flatnonzero((ys >= tri[:, 1].min()) & (ys <= tri[:, 1].max()))
        if len(i) == 0 or len(j) == 0:
            continue
        X, Y = np.meshgrid(xs[i], ys[j], indexing="ij")
        area = nz[f]
        l0 = ((b[f, 0] - X) * (c[f, 1] - Y) - (b[f, 1] - Y) * (c[f, 0] - X)) / area
        l1 = ((c[f, 0] - X) * (a[f, 1] - Y) - (c[f, 1] - Y) * (a[f, 0] - X)) / area
        l2 = 1.0 - l0 - l1
        hit = (l0 >= 0) & (l1 >= 0) & (l2 >= 0)
        if not hit.any():
            continue
        z = l0 * a[f, 2] + l1 * b[f, 2] + l2 * c[f, 2]
        k = np.clip(np.ceil((z - lo[2]) / cell[2] - 0.5), 0, resolution).astype(np.int64)
        ii, jj = np.meshgrid(i, j, indexing="ij")
        # a ray going up enters through faces whose normal points down
        np.add.at(toggles, (ii[hit], jj[hit], k[hit]), -np.sign(area))
    winding = np.cumsum(toggles, axis=2)[:, :, :resolution]
    return float((np.abs(winding) > 0.5).sum() * np.prod(cell))


def expected_volume(body_length: float, model: MassModel = DEFAULT_MASS_MODEL) -> float:
    """Length-expected body volume from the log-log regression."""
    if not body_length > 0:
        raise ValueError("body length must be positive")
    return float(np.exp(model.a0 + model.a1 * np.log(body_length)))


def body_condition_index(volume: float, body_length: float, model: MassModel = DEFAULT_MASS_MODEL) -> float:
    if volume < 0:
        raise ValueError("volume must be nonnegative")
    expected = expected_volume(body_length, model)
    return (volume - expected) / expected


def body_density(volume: float, body_length: float, model: MassModel = DEFAULT_MASS_MODEL) -> float:
    return model.alpha - model.beta * body_condition_index(volume, body_length, model)


def predicted_mass(volume: float, body_length: float, model: MassModel = DEFAULT_MASS_MODEL) -> float:
    """Volume times the condition-dependent density, in kg."""
    density = body_density(volume, body_length, model)
    if density <= 0:
        raise OutOfModelError(f"density {density:.3f} kg/m^3 is out of the model range")
    return volume * density


# ---------------------------------------------------------------- elliptical baseline


def elliptical_segment_volume(bl, w_a, w_p, h_a, h_p, printed_form: bool = False) -> float:
    """Volume of one 5%-of-length elliptical frustum.

    Width and height both vary linearly from the anterior to the posterior
    section. ``printed_form`` uses the printed integrand instead, in which
    the height factor is the constant posterior height.
    """
    if min(bl, w_a, w_p, h_a, h_p) < 0:
        raise ValueError("segment inputs must be nonnegative")
    dw, dh = w_p - w_a, h_p - h_a
    if printed_form:
        return 0.05 * bl * np.pi / 4.0 * (w_a + dw / 2.0) * (h_a + dh)
    return 0.05 * bl * np.pi / 4.0 * (w_a * h_a + (w_a * dh + h_a * dw) / 2.0 + dw * dh / 3.0)


@dataclass
class BodyProfile:
    body_length: float
    widths: np.ndarray  # (19,) m at 5..95 % BL
    heights: np.ndarray | None = None  # (19,) m, measured
    hw_ratios: np.ndarray = field(default_factory=lambda: np.ones(N_SITES))

    def __post_init__(self):
        self.widths = np.asarray(self.widths, dtype=np.float64)
        self.hw_ratios = np.asarray(self.hw_ratios, dtype=np.float64)
        if self.heights is not None:
            self.heights = np.asarray(self.heights, dtype=np.float64)
        if not self.body_length > 0:
            raise ValueError("body length must be positive")
        if self.widths.shape != (N_SITES,) or self.hw_ratios.shape != (N_SITES,):
            raise ValueError(f"profiles need {N_SITES} sites")
        if self.heights is not None and self.heights.shape != (N_SITES,):
            raise ValueError(f"profiles need {N_SITES} sites")

    def resolved_heights(self) -> np.ndarray:
        """Measured heights where given, otherwise width times the site HW ratio."""
        predicted = self.widths * self.hw_ratios
        if self.heights is None:
            return predicted
        return np.where(np.isnan(self.heights), predicted, self.heights)


def _tapered(values: np.ndarray) -> np.ndarray:
    """21 samples 0..100 %: zero endpoints, 90 % and 95 % interpolated
    between the 85 % value and the zero tail."""
    full = np.zeros(21)
    full[1:20] = values
    full[0] = full[20] = 0.0
    full[18] = full[17] + (full[20] - full[17]) * (5.0 / 15.0)
    full[19] = full[17] + (full[20] - full[17]) * (10.0 / 15.0)
    return full


def elliptical_body_volume(profile: BodyProfile, printed_form: bool = False) -> float:
    """Sum of the 20 segment volumes along the body."""
    widths = profile.widths
    if np.isnan(widths[:17]).any():
        raise ValueError("widths are required at every site from 5% to 85% BL")
    heights = profile.resolved_heights()
    if np.isnan(heights[:17]).any():
        raise ValueError("heights are required at every site from 5% to 85% BL")
    w = _tapered(np.nan_to_num(widths))
    h = _tapered(np.nan_to_num(heights))
    return float(
        sum(
            elliptical_segment_volume(profile.body_length, w[s], w[s + 1], h[s], h[s + 1], printed_form)
            for s in range(20)
        )
    )


def _site_columns(prefix: str) -> list[str]:
    return [f"{prefix}{s:02d}" for s in SITES]


def read_profiles(path) -> list[tuple[str, BodyProfile]]:
    """Profiles from a CSV with ``BL``, ``W05``..``W95`` and optional
    ``H05``..``H95`` (and optional ``id``) columns."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        missing = [c for c in ["BL"] + _site_columns("W") if c not in cols]
        if missing:
            raise ValueError(f"{path}: missing columns {', '.join(missing)}")
        has_h = all(c in cols for c in _site_columns("H"))
        for n, row in enumerate(reader):
            def num(c):
                s = (row.get(c) or "").strip()
                return float(s) if s else np.nan

            widths = np.array([num(c) for c in _site_columns("W")])
            heights = np.array([num(c) for c in _site_columns("H")]) if has_h else None
            ident = row.get("id") or str(n)
            out.append((ident, BodyProfile(num("BL"), widths, heights)))
    return out


def read_hw_ratios(path) -> np.ndarray:
    """19 site ratios, either one per line or one row with 19 values (an
    optional header row is skipped)."""
    values: list[float] = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            for cell in row:
                cell = cell.strip()
                if not cell:
                    continue
                try:
                    values.append(float(cell))
                except ValueError:
                    continue
    if len(values) != N_SITES:
        raise ValueError(f"{path}: expected {N_SITES} HW ratios, found {len(values)}")
    return np.asarray(values)


REPORT_COLUMNS = ["id", "volume_3d", "volume_elliptical", "bci", "density", "mass_3d", "mass_elliptical"]


def report_row(ident: str, body_length: float, volume_3d: float | None = None, volume_elliptical: float | None = None,
               model: MassModel = DEFAULT_MASS_MODEL) -> dict:
    """One report row; condition and density follow the 3-D volume when
    present, otherwise the elliptical one."""
    row = {c: "" for c in REPORT_COLUMNS}
    row["id"] = ident
    main = volume_3d if volume_3d is not None else volume_elliptical
    if main is not None:
        row["bci"] = body_condition_index(main, body_length, model)
        row["density"] = body_density(main, body_length, model)
    if volume_3d is not None:
        row["volume_3d"] = volume_3d
        row["mass_3d"] = predicted_mass(volume_3d, body_length, model)
    if volume_elliptical is not None:
        row["volume_elliptical"] = volume_elliptical
        row["mass_elliptical"] = predicted_mass(volume_elliptical, body_length, model)
    return row


def write_report(path, rows: list[dict]) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        for r in rows:
            writer.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in r.items()})


__all__ = [
    "MassModel", "MeshError", "OutOfModelError", "BodyProfile", "mesh_volume", "voxel_volume",
    "expected_volume", "body_condition_index", "body_density", "predicted_mass",
    "elliptical_segment_volume", "elliptical_body_volume", "read_profiles", "read_hw_ratios",
    "report_row", "write_report", "check_closed",
]
