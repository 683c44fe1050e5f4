"""Seeded generation of paired clean / metal-corrupted CT records.

A record bundles the clean phantom, its sinogram, a metal-corrupted
sinogram (beam-hardening polynomial plus noise, confined to the metal
trace so the off-trace raw data stays bit-identical to the clean
sinogram), the reconstruction of the corrupted data, residuals, the
metal descriptor tuple and deterministic caption templates.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import io, tomo

ORGAN_CLASSES = ("abdomen", "thorax", "pelvis", "head")
SIZE_BINS = ((40, "small"), (150, "medium"), (10**9, "large"))
QUANTITY_WORDS = ("no", "one", "two", "three", "four", "five", "six", "seven", "eight")

ROW_BANDS = ("top", "middle", "bottom")
COL_BANDS = ("left", "center", "right")


@dataclass(frozen=True)
class Ellipse:
    cy: float  # center, fraction of height in [-0.5, 0.5]
    cx: float
    ry: float  # semi-axes, fraction of height/width
    rx: float
    angle: float  # radians
    value: float  # attenuation (tissue: additive delta; metal: absolute)


@dataclass(frozen=True)
class PhantomSpec:
    seed: int
    n_ellipses: int
    attenuation_range: tuple = (0.0, 0.05)
    outline: Ellipse = None
    organ_class: str = "abdomen"
    ellipses: tuple = ()

    def __post_init__(self):
        lo, hi = self.attenuation_range
        if not (0 <= lo < hi):
            raise ValueError("attenuation range must be positive and increasing")


@dataclass(frozen=True)
class MetalSpec:
    ellipses: tuple
    mu_metal: float = 0.30

    def __post_init__(self):
        if not (0 <= len(self.ellipses) <= 8):
            raise ValueError("metal count must be between 0 and 8")


@dataclass(frozen=True)
class ArtifactModel:
    """Quadratic beam-hardening corruption confined to the metal trace."""

    c1: float = 1.0
    c2: float = -0.12
    noise_scale: float = 0.01

    def to_dict(self):
        return {"c1": self.c1, "c2": self.c2, "noise_scale": self.noise_scale}

    @classmethod
    def from_dict(cls, d):
        return cls(c1=float(d["c1"]), c2=float(d["c2"]), noise_scale=float(d["noise_scale"]))


@dataclass(frozen=True)
class QSPDTuple:
    quantity: int
    sizes: tuple
    positions: tuple
    description: str

    def __post_init__(self):
        if len(self.sizes) != self.quantity or len(self.positions) != self.quantity:
            raise ValueError("sizes/positions must have one entry per component")

    def to_dict(self):
        return {
            "quantity": self.quantity,
            "sizes": list(self.sizes),
            "positions": list(self.positions),
            "description": self.description,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["quantity"]), tuple(d["sizes"]), tuple(d["positions"]), d["description"])


@dataclass(frozen=True)
class SliceRecord:
    x_ref: tomo.ImageGrid
    x_ma: tomo.ImageGrid
    y_ref: tomo.Sinogram
    y_ma: tomo.Sinogram
    mask: tomo.MetalMask
    trace: tomo.MetalTrace
    x_r: tomo.ImageGrid
    y_r: tomo.Sinogram
    qspd: QSPDTuple
    caption_content: str
    caption_feature: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        off = ~self.trace.data
        if not np.array_equal(self.y_ma.data[off], self.y_ref.data[off]):
            raise ValueError("corruption leaked outside the metal trace")
        if not np.array_equal(self.x_r.data + self.x_ref.data, self.x_ma.data):
            raise ValueError("image residual does not add back exactly")
        if not np.array_equal(self.y_r.data + self.y_ref.data, self.y_ma.data):
            raise ValueError("sinogram residual does not add back exactly")


def _ellipse_coverage(shape, ell, supersample=2):
    """Fractional pixel coverage of an ellipse, via supersampled indicator."""
    h, w = shape
    ss = supersample
    ys = (np.arange(h * ss) + 0.5) / ss - 0.5
    xs = (np.arange(w * ss) + 0.5) / ss - 0.5
    yy = (ys / h - 0.5)[:, None] - ell.cy
    xx = (xs / w - 0.5)[None, :] - ell.cx
    c, s = np.cos(ell.angle), np.sin(ell.angle)
    u = xx * c + yy * s
    v = -xx * s + yy * c
    inside = (u / ell.rx) ** 2 + (v / ell.ry) ** 2 <= 1.0
    return inside.reshape(h, ss, w, ss).mean(axis=(1, 3))


def _ellipse_footprint(shape, ell):
    """Hard pixel-center-in-ellipse footprint (exact rasterization)."""
    h, w = shape
    yy = ((np.arange(h) + 0.5) / h - 0.5)[:, None] - ell.cy
    xx = ((np.arange(w) + 0.5) / w - 0.5)[None, :] - ell.cx
    c, s = np.cos(ell.angle), np.sin(ell.angle)
    u = xx * c + yy * s
    v = -xx * s + yy * c
    return (u / ell.rx) ** 2 + (v / ell.ry) ** 2 <= 1.0


def sample_phantom_spec(rng, n_ellipses=None, attenuation_range=(0.0, 0.05)):
    """Draw a random soft-tissue phantom layout."""
    organ = ORGAN_CLASSES[int(rng.integers(len(ORGAN_CLASSES)))]
    if n_ellipses is None:
        n_ellipses = int(rng.integers(3, 8))
    lo, hi = attenuation_range
    base = 0.35 * (hi - lo)
    if organ == "head":
        outline = Ellipse(0.0, 0.0, 0.40, 0.36, 0.0, lo + base)
    else:
        outline = Ellipse(0.0, 0.0, 0.36, 0.44, 0.0, lo + base)
    ellipses = []
    for _ in range(n_ellipses):
        ry = rng.uniform(0.04, 0.16)
        rx = rng.uniform(0.04, 0.16)
        # keep the ellipse inside the outline
        margin_y = outline.ry - ry
        margin_x = outline.rx - rx
        cy = rng.uniform(-0.75, 0.75) * margin_y
        cx = rng.uniform(-0.75, 0.75) * margin_x
        value = rng.uniform(-0.5, 1.2) * (hi - lo) * 0.45
        ellipses.append(Ellipse(cy, cx, ry, rx, rng.uniform(0, np.pi), value))
    return PhantomSpec(
        seed=int(rng.integers(2**31)),
        n_ellipses=n_ellipses,
        attenuation_range=attenuation_range,
        outline=outline,
        organ_class=organ,
        ellipses=tuple(ellipses),
    )


def gen_phantom(spec, size=64, pixel_size=1.0):
    """Rasterize a phantom spec; deterministic, values clipped to range."""
    shape = (size, size)
    img = np.zeros(shape, dtype=np.float64)
    outline_cov = _ellipse_coverage(shape, spec.outline)
    img += spec.outline.value * outline_cov
    for ell in spec.ellipses:
        img += ell.value * _ellipse_coverage(shape, ell)
    img *= outline_cov > 0  # nothing outside the body outline
    lo, hi = spec.attenuation_range
    img = np.clip(img, lo, hi)
    img = ndimage.gaussian_filter(img, sigma=0.7)  # keep the phantom band-limited
    return tomo.ImageGrid(size, size, pixel_size, img)


def sample_metal_spec(rng, quantity=None, area_range=(12.0, 90.0), image_size=64, mu_metal=0.30):
    """Draw metal implant ellipses with roughly the requested pixel areas."""
    if quantity is None:
        quantity = int(rng.integers(1, 4))
    ellipses = []
    for _ in range(quantity):
        area = rng.uniform(*area_range)
        r = np.sqrt(area / np.pi) / image_size
        stretch = rng.uniform(0.7, 1.4)
        cy = rng.uniform(-0.28, 0.28)
        cx = rng.uniform(-0.34, 0.34)
        ellipses.append(Ellipse(cy, cx, r * stretch, r / stretch, rng.uniform(0, np.pi), mu_metal))
    return MetalSpec(tuple(ellipses), mu_metal)


def insert_metal(img, spec):
    """Paste metal ellipses; mask is the exact rasterized union."""
    mask = np.zeros((img.height, img.width), dtype=bool)
    for ell in spec.ellipses:
        mask |= _ellipse_footprint((img.height, img.width), ell)
    out = np.array(img.data, dtype=np.float64, copy=True)
    out[mask] = spec.mu_metal
    return img.like(out), tomo.MetalMask(mask)


def corrupt_sinogram(y_ref, trace, model, metal_path, rng):
    """Metal-corrupted sinogram; off-trace entries keep the exact Y_ref bits."""
    p = np.asarray(metal_path.data, dtype=np.float64)
    on = trace.data
    corrupted = y_ref.data.astype(np.float64)
    noise = model.noise_scale * rng.standard_normal(corrupted.shape)
    corrupted = corrupted + model.c1 * p + model.c2 * p**2 + noise
    out = y_ref.data.astype(np.float32).copy()
    out[on] = corrupted.astype(np.float32)[on]
    return y_ref.like(out)


def residuals(x_ref, x_ma, y_ref, y_ma):
    """Exact metal/artifact residuals in both domains."""
    return x_ma.like(x_ma.data - x_ref.data), y_ma.like(y_ma.data - y_ref.data)


def _grid_label(cy, cx, shape):
    row = ROW_BANDS[min(2, int(3 * cy / shape[0]))]
    col = COL_BANDS[min(2, int(3 * cx / shape[1]))]
    if row == "middle" and col == "center":
        return "center"
    return f"{row} {col}"


def _size_word(area):
    for bound, word in SIZE_BINS:
        if area < bound:
            return word
    return "large"


def extract_qspd(mask):
    """Quantity / sizes / positions / description from the metal mask.

    Components use 8-connectivity; sizes are pixel areas in descending
    order with positions listed in the same component order.
    """
    labels, count = ndimage.label(mask.data, structure=np.ones((3, 3), dtype=bool))
    if count == 0:
        return QSPDTuple(0, (), (), "no metal implants")
    areas = ndimage.sum_labels(np.ones_like(labels), labels, index=np.arange(1, count + 1))
    centroids = ndimage.center_of_mass(mask.data, labels, index=np.arange(1, count + 1))
    order = np.argsort(-areas, kind="stable")
    sizes = tuple(int(areas[k]) for k in order)
    positions = tuple(_grid_label(*centroids[k], mask.data.shape) for k in order)
    word = QUANTITY_WORDS[min(count, len(QUANTITY_WORDS) - 1)]
    plural = "s" if count != 1 else ""
    description = f"{word} {_size_word(sizes[0])} metallic implant{plural} with streak artifacts"
    return QSPDTuple(count, sizes, positions, description)


def render_captions(qspd, phantom_meta):
    """Deterministic content / feature caption pair for one record."""
    organ = phantom_meta.get("organ_class", "abdomen")
    n_struct = phantom_meta.get("n_ellipses", 0)
    content = f"axial ct slice of the {organ} region with {n_struct} soft tissue structures"
    if qspd.quantity == 0:
        return content, "no metal implants"
    feature = (
        "metal implants"
        f" | quantity={qspd.quantity}"
        f" | sizes={','.join(str(s) for s in qspd.sizes)}"
        f" | positions={','.join(qspd.positions)}"
        f" | {qspd.description}"
    )
    return content, feature


def parse_feature_caption(text):
    """Recover (quantity, sizes) from a feature caption; inverse of the template."""
    if text.strip() == "no metal implants":
        return 0, ()
    q = int(re.search(r"quantity=(\d+)", text).group(1))
    sizes = tuple(int(s) for s in re.search(r"sizes=([\d,]+)", text).group(1).split(","))
    return q, sizes


def make_record(master_seed, index, geom, artifact_model=None, metal_quantity=None, metal_area_range=(12.0, 90.0), mu_metal=0.30, metal=True):
    """Build one fully validated record, deterministic in (master_seed, index)."""
    rng = np.random.default_rng([master_seed, index])
    artifact_model = artifact_model or ArtifactModel()
    spec = sample_phantom_spec(rng)
    x_ref = gen_phantom(spec, size=geom.image_height, pixel_size=geom.pixel_size)
    x_ref = x_ref.like(x_ref.data.astype(np.float32))
    if metal:
        mspec = sample_metal_spec(
            rng, quantity=metal_quantity, area_range=metal_area_range,
            image_size=geom.image_height, mu_metal=mu_metal,
        )
    else:
        mspec = MetalSpec((), mu_metal)
    _, mask = insert_metal(x_ref, mspec)

    forward = tomo.forward_project(x_ref, geom)
    y_ref = forward.like(forward.data.astype(np.float32))
    trace = tomo.metal_trace(mask, geom)
    metal_img = geom.new_image(mask.data.astype(np.float64) * mspec.mu_metal)
    metal_path = tomo.forward_project(metal_img, geom)
    y_ma = corrupt_sinogram(y_ref, trace, artifact_model, metal_path, rng)
    x_ma = tomo.fbp(y_ma, geom)
    x_ma = x_ma.like(x_ma.data.astype(np.float32))
    x_r, y_r = residuals(x_ref, x_ma, y_ref, y_ma)
    qspd = extract_qspd(mask)
    meta = {"seed": master_seed, "index": index, "organ_class": spec.organ_class, "n_ellipses": spec.n_ellipses}
    content, feature = render_captions(qspd, meta)
    return SliceRecord(
        x_ref=x_ref, x_ma=x_ma, y_ref=y_ref, y_ma=y_ma, mask=mask, trace=trace,
        x_r=x_r, y_r=y_r, qspd=qspd, caption_content=content, caption_feature=feature,
        meta=meta,
    )


def save_record(record, rec_dir):
    rec_dir.mkdir(parents=True, exist_ok=True)
    io.save_array(rec_dir / "x_ref", record.x_ref.data, tomo.image_meta(record.x_ref, "image"))
    io.save_array(rec_dir / "x_ma", record.x_ma.data, tomo.image_meta(record.x_ma, "image"))
    io.save_array(rec_dir / "x_r", record.x_r.data, tomo.image_meta(record.x_r, "image"))
    io.save_array(rec_dir / "y_ref", record.y_ref.data, tomo.sinogram_meta(record.y_ref, "sinogram"))
    io.save_array(rec_dir / "y_ma", record.y_ma.data, tomo.sinogram_meta(record.y_ma, "sinogram"))
    io.save_array(rec_dir / "y_r", record.y_r.data, tomo.sinogram_meta(record.y_r, "sinogram"))
    io.save_array(rec_dir / "mask", record.mask.data.astype(np.float32), {"kind": "mask", "height": record.mask.data.shape[0], "width": record.mask.data.shape[1]})
    io.save_array(rec_dir / "trace", record.trace.data.astype(np.float32), {"kind": "trace", "n_angles": record.trace.data.shape[0], "n_detectors": record.trace.data.shape[1]})
    io.write_json(rec_dir / "qspd.json", record.qspd.to_dict())
    io.write_json(rec_dir / "captions.json", {"content": record.caption_content, "feature": record.caption_feature})
    io.write_json(rec_dir / "record.json", record.meta)


def load_record(rec_dir, geom):
    """Rebuild a SliceRecord from disk (trusting stored invariants)."""
    arrays = {}
    for name in ("x_ref", "x_ma", "x_r"):
        data, _ = io.load_array(rec_dir / name)
        arrays[name] = geom.new_image(data)
    for name in ("y_ref", "y_ma", "y_r"):
        data, _ = io.load_array(rec_dir / name)
        arrays[name] = geom.new_sinogram(data)
    mask_data, _ = io.load_array(rec_dir / "mask")
    trace_data, _ = io.load_array(rec_dir / "trace")
    qspd = QSPDTuple.from_dict(io.read_json(rec_dir / "qspd.json"))
    captions = io.read_json(rec_dir / "captions.json")
    meta = io.read_json(rec_dir / "record.json")
    return SliceRecord(
        x_ref=arrays["x_ref"], x_ma=arrays["x_ma"], y_ref=arrays["y_ref"], y_ma=arrays["y_ma"],
        mask=tomo.MetalMask(mask_data > 0.5), trace=tomo.MetalTrace(trace_data > 0.5),
        x_r=arrays["x_r"], y_r=arrays["y_r"], qspd=qspd,
        caption_content=captions["content"], caption_feature=captions["feature"], meta=meta,
    )
