"""Parallel-beam tomographic operators.

Forward projection is ray-driven with linear-interpolated sampling;
reconstruction is filtered back-projection with a Hann-apodized Ram-Lak
filter applied per projection row in the (real) frequency domain.  All
operations are pure functions over immutable inputs; the per-angle loops
run sequentially so reductions have a fixed, documented order (sample
index, then angle).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates

DEFAULT_MU_WATER = 0.02  # water attenuation, mm^-1
TRACE_EPS = 1e-6  # absorbs interpolation dust in the trace indicator


class ConfigurationError(ValueError):
    """Geometry and array dimensions disagree."""


@dataclass(frozen=True)
class ImageGrid:
    """H x W attenuation map (mm^-1) on a square pixel grid."""

    height: int
    width: int
    pixel_size: float
    data: np.ndarray

    def __post_init__(self):
        if self.height < 8 or self.width < 8:
            raise ConfigurationError("image grids must be at least 8x8")
        if self.pixel_size <= 0:
            raise ConfigurationError("pixel_size must be positive")
        if self.data.shape != (self.height, self.width):
            raise ConfigurationError(
                f"data shape {self.data.shape} != ({self.height}, {self.width})"
            )
        if not np.all(np.isfinite(self.data)):
            raise ConfigurationError("image values must be finite")

    def like(self, data):
        """Same grid, new values."""
        return ImageGrid(self.height, self.width, self.pixel_size, np.asarray(data, dtype=self.data.dtype))


@dataclass(frozen=True)
class Sinogram:
    """A angles x D detectors line-integral array; angles uniform on [0, pi)."""

    n_angles: int
    n_detectors: int
    detector_spacing: float
    data: np.ndarray

    def __post_init__(self):
        if self.detector_spacing <= 0:
            raise ConfigurationError("detector_spacing must be positive")
        if self.data.shape != (self.n_angles, self.n_detectors):
            raise ConfigurationError(
                f"data shape {self.data.shape} != ({self.n_angles}, {self.n_detectors})"
            )
        if not np.all(np.isfinite(self.data)):
            raise ConfigurationError("sinogram values must be finite")

    def like(self, data):
        return Sinogram(
            self.n_angles, self.n_detectors, self.detector_spacing, np.asarray(data, dtype=self.data.dtype)
        )


@dataclass(frozen=True)
class MetalMask:
    """Binary H x W image; True marks metal pixels."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.dtype != np.bool_:
            raise ConfigurationError("mask must be boolean")


@dataclass(frozen=True)
class MetalTrace:
    """Binary A x D sinogram; True marks rays intersecting metal."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.dtype != np.bool_:
            raise ConfigurationError("trace must be boolean")


@dataclass(frozen=True)
class ProjectionGeometry:
    """Acquisition layout tying an image grid to its sinogram."""

    n_angles: int
    n_detectors: int
    detector_spacing: float
    image_height: int
    image_width: int
    pixel_size: float = 1.0
    step_fraction: float = field(default=0.5)  # ray sampling step, in pixels

    def __post_init__(self):
        if self.n_angles < 1 or self.n_detectors < 1:
            raise ConfigurationError("need at least one angle and one detector")
        if not (0 < self.step_fraction <= 0.5):
            raise ConfigurationError("ray step must be <= pixel_size / 2")
        diagonal = np.hypot(self.image_height, self.image_width) * self.pixel_size
        if self.n_detectors * self.detector_spacing < diagonal:
            raise ConfigurationError(
                "detector array does not cover the image diagonal (sinogram truncation)"
            )

    @property
    def angles(self):
        return np.arange(self.n_angles) * np.pi / self.n_angles

    @property
    def detector_positions(self):
        return (np.arange(self.n_detectors) - (self.n_detectors - 1) / 2.0) * self.detector_spacing

    def new_image(self, data=None, dtype=np.float64):
        if data is None:
            data = np.zeros((self.image_height, self.image_width), dtype=dtype)
        return ImageGrid(self.image_height, self.image_width, self.pixel_size, np.asarray(data))

    def new_sinogram(self, data=None, dtype=np.float64):
        if data is None:
            data = np.zeros((self.n_angles, self.n_detectors), dtype=dtype)
        return Sinogram(self.n_angles, self.n_detectors, self.detector_spacing, np.asarray(data))

    def to_dict(self):
        return {
            "n_angles": self.n_angles,
            "n_detectors": self.n_detectors,
            "detector_spacing": self.detector_spacing,
            "image_height": self.image_height,
            "image_width": self.image_width,
            "pixel_size": self.pixel_size,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            n_angles=int(d["n_angles"]),
            n_detectors=int(d["n_detectors"]),
            detector_spacing=float(d["detector_spacing"]),
            image_height=int(d["image_height"]),
            image_width=int(d["image_width"]),
            pixel_size=float(d["pixel_size"]),
        )


def default_geometry(image_size=64, n_angles=90, pixel_size=1.0, n_detectors=None):
    """Desk-scale layout: detectors cover the diagonal with unit spacing."""
    diagonal = np.hypot(image_size, image_size) * pixel_size
    if n_detectors is None:
        n_detectors = int(np.ceil(diagonal / pixel_size)) + 4
        n_detectors += n_detectors % 2 == 0  # odd count centers a detector on the axis
    return ProjectionGeometry(
        n_angles=n_angles,
        n_detectors=n_detectors,
        detector_spacing=pixel_size,
        image_height=image_size,
        image_width=image_size,
        pixel_size=pixel_size,
    )


def _check_image(img, geom):
    if (img.height, img.width) != (geom.image_height, geom.image_width):
        raise ConfigurationError(
            f"image {img.height}x{img.width} does not match geometry "
            f"{geom.image_height}x{geom.image_width}"
        )
    if img.pixel_size != geom.pixel_size:
        raise ConfigurationError("image pixel_size does not match geometry")


def _check_sinogram(sino, geom):
    if (sino.n_angles, sino.n_detectors) != (geom.n_angles, geom.n_detectors):
        raise ConfigurationError(
            f"sinogram {sino.n_angles}x{sino.n_detectors} does not match geometry "
            f"{geom.n_angles}x{geom.n_detectors}"
        )


def forward_project(img, geom):
    """Line integrals of ``img`` along every (angle, detector) ray.

    Rays are sampled at a fixed step of ``step_fraction * pixel_size``
    with bilinear interpolation (zero outside the grid); the integral is
    the step-weighted sample sum.
    """
    _check_image(img, geom)
    px = geom.pixel_size
    h = geom.step_fraction * px
    half_len = 0.5 * np.hypot(img.height, img.width) * px
    n_steps = int(np.ceil(2.0 * half_len / h))
    s = -half_len + (np.arange(n_steps) + 0.5) * h
    t = geom.detector_positions

    cy = (img.height - 1) / 2.0
    cx = (img.width - 1) / 2.0
    data = np.asarray(img.data, dtype=np.float64)
    out = np.empty((geom.n_angles, geom.n_detectors), dtype=np.float64)
    for a, theta in enumerate(geom.angles):
        cos_t, sin_t = np.cos(theta), np.sin(theta)
        # ray point = t * (cos, sin) + s * (-sin, cos), detector axis x cos + y sin = t
        x = t[:, None] * cos_t - s[None, :] * sin_t
        y = t[:, None] * sin_t + s[None, :] * cos_t
        coords = np.stack([y / px + cy, x / px + cx])
        samples = map_coordinates(data, coords, order=1, mode="constant", cval=0.0)
        out[a] = samples.sum(axis=1) * h
    return geom.new_sinogram(out)


def _ramp_filter(n_fft, spacing):
    """Frequency response of the band-limited Ram-Lak kernel, Hann apodized.

    Built from the spatial-domain kernel (Kak & Slaney) rather than |f|
    sampling, which keeps the DC/low-frequency response correct.
    """
    kernel = np.zeros(n_fft)
    kernel[0] = 1.0 / (4.0 * spacing**2)
    k = np.arange(1, n_fft // 2 + 1)
    odd = k % 2 == 1
    vals = np.zeros_like(k, dtype=np.float64)
    vals[odd] = -1.0 / (np.pi * k[odd] * spacing) ** 2
    kernel[1 : n_fft // 2 + 1] = vals
    kernel[-(n_fft // 2) :] = vals[::-1][: n_fft // 2]
    response = np.real(np.fft.rfft(kernel)) * spacing
    freqs = np.fft.rfftfreq(n_fft, d=spacing)
    nyquist = freqs[-1]
    hann = 0.5 * (1.0 + np.cos(np.pi * freqs / nyquist))
    return response * hann


def fbp(sino, geom):
    """Filtered back-projection of ``sino`` onto the geometry's image grid."""
    _check_sinogram(sino, geom)
    spacing = geom.detector_spacing
    n_det = geom.n_detectors
    n_fft = 1 << int(np.ceil(np.log2(max(64, 4 * n_det))))
    ramp = _ramp_filter(n_fft, spacing)

    rows = np.zeros((geom.n_angles, n_fft), dtype=np.float64)
    rows[:, :n_det] = np.asarray(sino.data, dtype=np.float64)
    filtered = np.fft.irfft(np.fft.rfft(rows, axis=1) * ramp[None, :], n=n_fft, axis=1)[:, :n_det]

    cy = (geom.image_height - 1) / 2.0
    cx = (geom.image_width - 1) / 2.0
    ys = (np.arange(geom.image_height) - cy) * geom.pixel_size
    xs = (np.arange(geom.image_width) - cx) * geom.pixel_size
    grid_x, grid_y = np.meshgrid(xs, ys)
    det = geom.detector_positions

    recon = np.zeros((geom.image_height, geom.image_width), dtype=np.float64)
    for a, theta in enumerate(geom.angles):
        t = grid_x * np.cos(theta) + grid_y * np.sin(theta)
        recon += np.interp(t, det, filtered[a], left=0.0, right=0.0)
    recon *= np.pi / geom.n_angles
    if not np.all(np.isfinite(recon)):
        raise FloatingPointError("non-finite values in reconstruction")
    return geom.new_image(recon)


def segment_metal(img, threshold):
    """Threshold segmentation: mask = (img > threshold)."""
    if threshold <= 0:
        raise ConfigurationError("metal threshold must be positive")
    return MetalMask(np.asarray(img.data) > threshold)


def metal_trace(mask, geom):
    """Rays whose path intersects the mask: indicator(FP(mask) > eps)."""
    img = geom.new_image(mask.data.astype(np.float64))
    proj = forward_project(img, geom)
    return MetalTrace(proj.data > TRACE_EPS)


def hu_to_mu(values, mu_water=DEFAULT_MU_WATER):
    """Hounsfield units -> linear attenuation: mu = mu_w (HU/1000 + 1)."""
    if isinstance(values, ImageGrid):
        return values.like(hu_to_mu(values.data, mu_water))
    return mu_water * (np.asarray(values, dtype=np.float64) / 1000.0 + 1.0)


def mu_to_hu(values, mu_water=DEFAULT_MU_WATER):
    """Exact inverse of :func:`hu_to_mu`."""
    if isinstance(values, ImageGrid):
        return values.like(mu_to_hu(values.data, mu_water))
    return (np.asarray(values, dtype=np.float64) / mu_water - 1.0) * 1000.0


def image_meta(img, kind="image"):
    return {
        "kind": kind,
        "height": img.height,
        "width": img.width,
        "pixel_size": img.pixel_size,
        "units": "mm^-1",
    }


def sinogram_meta(sino, kind="sinogram"):
    return {
        "kind": kind,
        "n_angles": sino.n_angles,
        "n_detectors": sino.n_detectors,
        "detector_spacing": sino.detector_spacing,
        "units": "1",
    }
