"""Procedural brain-like phantoms defined in continuous millimetre coordinates.

The label function is analytic, so the same spec rendered at any voxel size
describes the same physical object: labels are evaluated at voxel centres,
intensities are supersampled inside each voxel (partial-volume effect), then
a smooth bias field and Gaussian noise are applied.

Geometry (x: left->right, y: posterior->anterior, z: inferior->superior):
an ellipsoidal brain inside a CSF rim, split by a gently curved CSF midline fissure, with
a gray-matter shell that also lines the fissure and a set of wavy sulci
(thin CSF clefts lined by gray matter), white matter inside, one ellipsoidal
subcortical blob per hemisphere and a midline brainstem.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .labels import DESK_TABLE
from .volume import IntensityVolume, LabelVolume

TISSUE_MEANS = {"bg": 8.0, "csf": 40.0, "gm": 90.0, "wm": 150.0, "sub": 115.0, "stem": 130.0}


@dataclass
class PhantomSpec:
    seed: int = 0
    fov_mm: float = 48.0
    radii_mm: tuple = (19.0, 21.0, 17.0)
    radius_jitter: float = 0.05
    gm_thickness_mm: float = 2.0
    csf_rim_mm: float = 3.0
    sulcus_width_mm: float = 1.5
    sulcus_depth_mm: float = 5.0
    n_sulci: int = 4
    sulcus_wave_mm: float = 1.2
    sulcus_wavelength_mm: float = 14.0
    fissure_width_mm: float = 1.5
    fissure_wave_mm: float = 0.8
    fissure_wavelength_mm: float = 12.0
    subcortical_offset_mm: float = 8.5
    subcortical_radii_mm: tuple = (4.0, 5.5, 4.0)
    stem_center_mm: tuple = (0.0, -3.0, -7.0)
    stem_radii_mm: tuple = (3.5, 4.5, 7.0)
    intensity_means: dict = field(default_factory=lambda: dict(TISSUE_MEANS))
    noise_sigma: float = 3.0
    bias_amplitude: float = 0.05
    supersample: int = 3

    def to_dict(self) -> dict:
        return asdict(self)


class PhantomGeometry:
    """Seed-specific realisation of a :class:`PhantomSpec`."""

    def __init__(self, spec: PhantomSpec):
        self.spec = spec
        rng = np.random.default_rng(spec.seed)
        jit = 1.0 + spec.radius_jitter * rng.uniform(-1, 1, size=3)
        self.radii = np.asarray(spec.radii_mm) * jit
        self.mean_radius = float(self.radii.mean())
        normals, tangents = [], []
        while len(normals) < spec.n_sulci:
            n = rng.normal(size=3)
            n /= np.linalg.norm(n)
            if abs(n[0]) > 0.8:  # would run parallel to the midline fissure
                continue
            t = np.cross(n, rng.normal(size=3))
            t /= np.linalg.norm(t)
            normals.append(n)
            tangents.append(t)
        self.normals = np.array(normals).reshape(-1, 3)
        self.tangents = np.array(tangents).reshape(-1, 3)
        self.phases = rng.uniform(0, 2 * np.pi, size=spec.n_sulci)
        self.sub_shift = rng.uniform(-1.0, 1.0, size=3)
        self.bias_coef = rng.uniform(-1, 1, size=6)
        self.fissure_phase = rng.uniform(0, 2 * np.pi, size=2)

    def midline(self, y, z) -> np.ndarray:
        """x position of the interhemispheric surface (gently curved)."""
        s = self.spec
        k = 2 * np.pi / s.fissure_wavelength_mm
        return s.fissure_wave_mm * np.sin(k * y + self.fissure_phase[0]) * np.cos(k * z + self.fissure_phase[1])

    def sulcus_distance(self, x, y, z) -> np.ndarray:
        s = self.spec
        best = np.full(np.shape(x), np.inf)
        k = 2 * np.pi / s.sulcus_wavelength_mm
        for n, t, ph in zip(self.normals, self.tangents, self.phases):
            along = n[0] * x + n[1] * y + n[2] * z
            across = t[0] * x + t[1] * y + t[2] * z
            best = np.minimum(best, np.abs(along + s.sulcus_wave_mm * np.sin(k * across + ph)))
        return best

    def labels_at(self, x, y, z) -> np.ndarray:
        """Label id at physical points (mm)."""
        s = self.spec
        a, b, c = self.radii
        r = np.sqrt((x / a) ** 2 + (y / b) ** 2 + (z / c) ** 2)
        depth = (1.0 - r) * self.mean_radius
        inside = r < 1.0
        out = np.zeros(np.shape(x), dtype=np.int16)
        out[(~inside) & (r < 1.0 + s.csf_rim_mm / self.mean_radius)] = 1

        t, half_w = s.gm_thickness_mm, s.sulcus_width_mm / 2
        sd = self.sulcus_distance(x, y, z)
        dx = x - self.midline(y, z)
        ax = np.abs(dx)
        csf = inside & (((sd < half_w) & (depth < s.sulcus_depth_mm)) | (ax < s.fissure_width_mm / 2))
        gm = inside & ~csf & ((depth < t) | ((sd < half_w + t) & (depth < s.sulcus_depth_mm + t))
                              | (ax < s.fissure_width_mm / 2 + t))
        wm = inside & ~csf & ~gm
        left = dx < 0
        out[csf] = 1
        out[gm & left] = 4
        out[gm & ~left] = 5
        out[wm & left] = 2
        out[wm & ~left] = 3

        sr = np.asarray(s.subcortical_radii_mm)
        for sign, lab in ((-1, 6), (1, 7)):
            cx = sign * s.subcortical_offset_mm + self.sub_shift[0] * sign
            blob = ((x - cx) / sr[0]) ** 2 + ((y - self.sub_shift[1]) / sr[1]) ** 2 \
                + ((z - self.sub_shift[2]) / sr[2]) ** 2 < 1.0
            out[blob & wm] = lab
        sc, rr = np.asarray(s.stem_center_mm), np.asarray(s.stem_radii_mm)
        stem = ((x - sc[0]) / rr[0]) ** 2 + ((y - sc[1]) / rr[1]) ** 2 + ((z - sc[2]) / rr[2]) ** 2 < 1.0
        out[stem & inside] = 8
        return out

    def bias_at(self, x, y, z) -> np.ndarray:
        R = self.mean_radius
        u, v, w = x / R, y / R, z / R
        c = self.bias_coef
        return 1.0 + self.spec.bias_amplitude * (c[0] * u + c[1] * v + c[2] * w + c[3] * u * v
                                                 + c[4] * v * w + c[5] * (u * u - w * w))


def grid_dims(fov_mm: float, voxel_mm: float) -> int:
    """Even voxel count so grids at v and 2v nest exactly."""
    return 2 * int(np.floor(fov_mm / (2 * voxel_mm) + 0.5))


def voxel_centres(n: int, voxel_mm: float) -> np.ndarray:
    return (np.arange(n) + 0.5 - n / 2) * voxel_mm


def render_phantom(spec: PhantomSpec, voxel_mm: float):
    """Render (IntensityVolume, LabelVolume) at an isotropic voxel size."""
    if not 0.5 <= voxel_mm <= 2.0:
        raise ValueError(f"voxel size {voxel_mm} mm outside [0.5, 2.0]")
    geo = PhantomGeometry(spec)
    n = grid_dims(spec.fov_mm, voxel_mm)
    c = voxel_centres(n, voxel_mm)
    X, Y, Z = np.meshgrid(c, c, c, indexing="ij")
    labels = geo.labels_at(X, Y, Z)

    means = np.zeros(max(e.id for e in DESK_TABLE) + 1)
    for e in DESK_TABLE:
        means[e.id] = spec.intensity_means[e.tissue]
    k = max(1, int(spec.supersample))
    offs = (np.arange(k) + 0.5) / k - 0.5
    acc = np.zeros((n, n, n))
    for ox in offs:
        for oy in offs:
            for oz in offs:
                acc += means[geo.labels_at(X + ox * voxel_mm, Y + oy * voxel_mm, Z + oz * voxel_mm)]
    img = acc / k ** 3 * geo.bias_at(X, Y, Z)
    noise_rng = np.random.default_rng([spec.seed, int(round(voxel_mm * 1000))])
    img = img + noise_rng.normal(0.0, spec.noise_sigma, size=img.shape)
    return (IntensityVolume(img.astype(np.float32), float(voxel_mm)),
            LabelVolume(labels, float(voxel_mm)))


def render_labels(spec: PhantomSpec, voxel_mm: float) -> LabelVolume:
    geo = PhantomGeometry(spec)
    n = grid_dims(spec.fov_mm, voxel_mm)
    c = voxel_centres(n, voxel_mm)
    X, Y, Z = np.meshgrid(c, c, c, indexing="ij")
    return LabelVolume(geo.labels_at(X, Y, Z), float(voxel_mm))


def downsample_labels(labels: np.ndarray, factor: int = 2) -> np.ndarray:
    """Majority vote over factor^3 blocks; ties go to the lowest label id."""
    n = np.array(labels.shape) // factor
    blocks = labels[:n[0] * factor, :n[1] * factor, :n[2] * factor].reshape(
        n[0], factor, n[1], factor, n[2], factor).transpose(0, 2, 4, 1, 3, 5).reshape(*n, -1)
    nlab = int(labels.max()) + 1
    counts = np.stack([(blocks == k).sum(axis=-1) for k in range(nlab)], axis=-1)
    return counts.argmax(axis=-1).astype(labels.dtype)


def downsample_image(image: np.ndarray, factor: int = 2) -> np.ndarray:
    """Block average over factor^3 blocks."""
    n = np.array(image.shape) // factor
    blocks = image[:n[0] * factor, :n[1] * factor, :n[2] * factor].reshape(
        n[0], factor, n[1], factor, n[2], factor)
    return blocks.mean(axis=(1, 3, 5)).astype(image.dtype)
