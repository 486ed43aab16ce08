"""Procedural generator of small fundus-like images from ground-truth factors.

Scene model, all in unit coordinates on a square grid with the retina disk
inscribed:

* a circular field of view on an exactly-zero background;
* interior brightness set by the pigmentation factor (darker pigmentation
  means a darker background AND lower vessel contrast, so appearance and
  disease cues are entangled in pixel space);
* two vascular arcades plus branches whose stroke width grows with the
  vessel-caliber factor;
* a bright optic disc with an inner cup whose radius fraction grows with
  the disc-ratio factor;
* bright lesion blobs: 3 per severity grade, none at grade 0, grade-1 blobs
  at half amplitude so the referable boundary sits between grades 1 and 2.
  Blob centers are snapped to pixel centers and kept apart, so away from the
  optic disc a connected-component count above lesion_core_threshold
  recovers the blob count.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateInputError, InvalidArgumentError, SpecificationError
from .seeds import sample_seed

RA_LIGHTER = "lighter"
RA_DARKER = "darker"
RA_INDETERMINATE = "indeterminate"
RA_LABELS = (RA_LIGHTER, RA_DARKER, RA_INDETERMINATE)

PROV_MANUAL = "manual"
PROV_EXTRAPOLATED = "extrapolated"
PROV_SYNTHETIC = "synthetic"
PROVENANCES = (PROV_MANUAL, PROV_EXTRAPOLATED, PROV_SYNTHETIC)

SUBGROUPS = ("HL", "RL", "HD", "RD")
DR_LEVELS = (0, 1, 2, 3, 4)
REFERABLE_LEVELS = (2, 3, 4)
HEALTHY_LEVELS = (0, 1)

MIN_IMAGE_SIZE = 16

# scene constants (unit coordinates; retina radius is 1.0 scaled to 0.96)
RETINA_RADIUS = 0.96
BG_LIGHTEST = 0.70
BG_SPAN = 0.50
VESSEL_LEVEL = 0.45  # vessel value = VESSEL_LEVEL * background
DISC_CENTER = (0.40, -0.12)
DISC_RADIUS = 0.17
DISC_LIFT = 0.14
CUP_LIFT = 0.21
# lesion amplitude is multiplicative in the local background, so lesion
# appearance in pixel space scales with pigmentation; templates calibrated on
# one appearance class under-respond on the other
LESION_MULT = 0.45
LESION_SIGMA = 0.14
LESION_MIN_SEP = 0.24
LESION_FIELD_RADIUS = 0.72
LESION_CORE_FACTOR = 0.90  # blob-core pixels exceed bg + factor * amplitude
LESIONS_PER_GRADE = 3


@dataclass(frozen=True)
class FactorVector:
    """Ground-truth generative factors; the oracle behind all labels."""

    pigmentation: float  # 0 = lightest background, 1 = darkest
    dr_severity: int  # 0..4
    vessel_caliber: float  # 0..1 relative stroke width
    disc_ratio: float  # 0..1 relative cup radius
    lesion_seed: int  # 64-bit placement randomness

    def __post_init__(self):
        for name in ("pigmentation", "vessel_caliber", "disc_ratio"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidArgumentError(f"{name}={v} outside [0, 1]")
        if self.dr_severity not in DR_LEVELS:
            raise InvalidArgumentError(f"dr_severity={self.dr_severity} outside 0..4")
        if not 0 <= int(self.lesion_seed) < 2**64:
            raise InvalidArgumentError("lesion_seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class RAThresholds:
    """Pigmentation band defining the three-way appearance label."""

    t_lo: float = 0.35
    t_hi: float = 0.65

    def __post_init__(self):
        if not 0.0 <= self.t_lo < self.t_hi <= 1.0:
            raise InvalidArgumentError(
                f"appearance thresholds need 0 <= t_lo < t_hi <= 1, got ({self.t_lo}, {self.t_hi})"
            )


def expected_subgroup(referable: bool, ra_label: str) -> str:
    if ra_label == RA_INDETERMINATE:
        raise InvalidArgumentError("indeterminate appearance has no subgroup")
    if ra_label not in RA_LABELS:
        raise InvalidArgumentError(f"unknown appearance label {ra_label!r}")
    if referable:
        return "RL" if ra_label == RA_LIGHTER else "RD"
    return "HL" if ra_label == RA_LIGHTER else "HD"


@dataclass(frozen=True)
class ImageSample:
    sample_id: str
    pixels: np.ndarray  # (H, W) float64 in [0, 1]
    dr_level: int
    referable: bool
    ra_label: str
    subgroup: str
    ra_provenance: str
    factors: FactorVector | None  # hidden from classifiers; oracle use only

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        object.__setattr__(self, "pixels", px)
        if px.ndim != 2 or px.size == 0:
            raise InvalidArgumentError("pixels must be a non-empty 2-D grid")
        if px.min() < 0.0 or px.max() > 1.0:
            raise InvalidArgumentError("pixel values must lie in [0, 1]")
        if self.dr_level not in DR_LEVELS:
            raise InvalidArgumentError("dr_level outside 0..4")
        if self.referable != (self.dr_level >= 2):
            raise InvalidArgumentError("referable flag inconsistent with dr_level")
        if self.ra_provenance not in PROVENANCES:
            raise InvalidArgumentError(f"unknown provenance {self.ra_provenance!r}")
        if expected_subgroup(self.referable, self.ra_label) != self.subgroup:
            raise InvalidArgumentError(
                f"subgroup {self.subgroup} inconsistent with (referable={self.referable}, ra={self.ra_label})"
            )


def relabel_appearance(sample: ImageSample, ra_label: str, provenance: str) -> ImageSample:
    """New sample with a replaced appearance label; subgroup follows the label."""
    return replace(
        sample,
        ra_label=ra_label,
        subgroup=expected_subgroup(sample.referable, ra_label),
        ra_provenance=provenance,
    )


def lesion_count(dr_severity: int) -> int:
    """Declared blob count per severity grade: 0, 3, 6, 9, 12."""
    if dr_severity not in DR_LEVELS:
        raise InvalidArgumentError("dr_severity outside 0..4")
    return LESIONS_PER_GRADE * dr_severity


def background_level(pigmentation: float) -> float:
    """Interior background brightness; strictly decreasing in pigmentation."""
    return BG_LIGHTEST - BG_SPAN * pigmentation


def lesion_amplitude(pigmentation: float, dr_severity: int) -> float:
    """Blob amplitude above background; grade 1 renders at half contrast."""
    if dr_severity == 0:
        return 0.0
    amp = background_level(pigmentation) * LESION_MULT
    return amp / 2.0 if dr_severity == 1 else amp


def lesion_core_threshold(pigmentation: float, dr_severity: int) -> float:
    """Pixel level exceeded only near blob centers of this severity (outside
    the optic-disc region, which is brighter than dark-background lesions)."""
    return background_level(pigmentation) + LESION_CORE_FACTOR * lesion_amplitude(
        pigmentation, dr_severity
    )


def vessel_half_width(vessel_caliber: float) -> float:
    """Stroke half-width in unit coordinates; strictly increasing."""
    return 0.035 + 0.075 * vessel_caliber


def cup_radius_fraction(disc_ratio: float) -> float:
    """Cup radius as a fraction of the disc radius; strictly increasing."""
    return 0.20 + 0.70 * disc_ratio


def pixel_grid(size: int):
    """Unit-coordinate pixel-center grids (x, y) for a size x size image."""
    centers = (2.0 * (np.arange(size) + 0.5) / size) - 1.0
    return np.meshgrid(centers, centers, indexing="xy")


def _arcade_polylines(jitter: float) -> list[np.ndarray]:
    """Two temporal arcades and two branches leaving the optic disc."""
    cx, cy = DISC_CENTER
    t = np.linspace(0.0, 1.0, 16)
    curves = []
    for sign in (1.0, -1.0):
        x = cx - 1.55 * t
        y = cy + sign * (0.18 + 0.62 * np.sin(np.pi * np.clip(t, 0, 1)) ** 0.9) * t**0.5 + jitter * t
        curves.append(np.stack([x, y], axis=1))
    for sign in (1.0, -1.0):
        x = cx - 0.25 - 0.9 * t
        y = cy + sign * (0.05 + 0.28 * t) - jitter * t
        curves.append(np.stack([x, y], axis=1))
    return curves


def _distance_to_polylines(xg: np.ndarray, yg: np.ndarray, curves: list[np.ndarray]) -> np.ndarray:
    d2 = np.full(xg.shape, np.inf)
    for poly in curves:
        for (px, py), (qx, qy) in zip(poly[:-1], poly[1:]):
            vx, vy = qx - px, qy - py
            seg_len2 = vx * vx + vy * vy
            if seg_len2 == 0.0:
                continue
            tproj = np.clip(((xg - px) * vx + (yg - py) * vy) / seg_len2, 0.0, 1.0)
            dx = xg - (px + tproj * vx)
            dy = yg - (py + tproj * vy)
            d2 = np.minimum(d2, dx * dx + dy * dy)
    return np.sqrt(d2)


def _lesion_centers(factors: FactorVector, size: int) -> np.ndarray:
    """Seeded rejection sampling of blob centers, snapped to pixel centers.

    Centers stay inside the lesion field, clear of the optic disc, and at
    least LESION_MIN_SEP apart so above-threshold cores never merge.
    """
    n = lesion_count(factors.dr_severity)
    if n == 0:
        return np.empty((0, 2))
    rng = np.random.Generator(np.random.PCG64(int(factors.lesion_seed)))
    centers: list[tuple[float, float]] = []
    min_sep = LESION_MIN_SEP
    attempts = 0
    while len(centers) < n:
        attempts += 1
        if attempts > 4000:  # loosen separation rather than spin forever
            min_sep *= 0.8
            attempts = 0
        r = LESION_FIELD_RADIUS * np.sqrt(rng.uniform())
        theta = rng.uniform(0.0, 2.0 * np.pi)
        x, y = r * np.cos(theta), r * np.sin(theta)
        # snap to the nearest pixel center
        x = (2.0 * (np.floor((x + 1.0) * size / 2.0) + 0.5) / size) - 1.0
        y = (2.0 * (np.floor((y + 1.0) * size / 2.0) + 0.5) / size) - 1.0
        if np.hypot(x - DISC_CENTER[0], y - DISC_CENTER[1]) < DISC_RADIUS + 0.12:
            continue
        if any(np.hypot(x - cx, y - cy) < min_sep for cx, cy in centers):
            continue
        centers.append((x, y))
    return np.array(centers)


def render(factors: FactorVector, size: int) -> np.ndarray:
    """Render the factor vector to a (size, size) grid in [0, 1].

    Pure and deterministic in (factors, size).
    """
    if size < MIN_IMAGE_SIZE:
        raise InvalidArgumentError(f"size must be >= {MIN_IMAGE_SIZE}, got {size}")
    xg, yg = pixel_grid(size)
    rr = np.hypot(xg, yg)
    disk = rr <= RETINA_RADIUS

    bg = background_level(factors.pigmentation)
    img = np.zeros((size, size), dtype=np.float64)
    img[disk] = bg

    jitter_rng = np.random.Generator(np.random.PCG64(int(factors.lesion_seed) ^ 0xA5A5A5A5))
    jitter = jitter_rng.uniform(-0.06, 0.06)
    vessel_dist = _distance_to_polylines(xg, yg, _arcade_polylines(jitter))
    vessels = (vessel_dist <= vessel_half_width(factors.vessel_caliber)) & disk
    img[vessels] = bg * VESSEL_LEVEL

    disc_dist = np.hypot(xg - DISC_CENTER[0], yg - DISC_CENTER[1])
    disc = (disc_dist <= DISC_RADIUS) & disk
    img[disc] = bg + DISC_LIFT
    cup = (disc_dist <= DISC_RADIUS * cup_radius_fraction(factors.disc_ratio)) & disk
    img[cup] = bg + CUP_LIFT

    centers = _lesion_centers(factors, size)
    if centers.shape[0]:
        amp = lesion_amplitude(factors.pigmentation, factors.dr_severity)
        for cx, cy in centers:
            d2 = (xg - cx) ** 2 + (yg - cy) ** 2
            blob = bg + amp * np.exp(-d2 / (2.0 * LESION_SIGMA**2))
            img = np.where(disk & (blob > img), blob, img)

    return np.clip(img, 0.0, 1.0)


def assign_labels(factors: FactorVector, thresholds: RAThresholds) -> tuple[int, bool, str]:
    """Map factors to (dr_level, referable, appearance label)."""
    dr_level = factors.dr_severity
    referable = dr_level >= 2
    if factors.pigmentation < thresholds.t_lo:
        ra = RA_LIGHTER
    elif factors.pigmentation > thresholds.t_hi:
        ra = RA_DARKER
    else:
        ra = RA_INDETERMINATE
    return dr_level, referable, ra


@dataclass(frozen=True)
class FactorMix:
    """How strongly vessel caliber and disc ratio track pigmentation.

    The darker class presents with larger calibers and cup ratios on average;
    the mixing weights are configuration, not a measured quantity.
    """

    base: float = 0.25
    pigment_weight: float = 0.50
    noise: float = 0.25


@dataclass(frozen=True)
class PopulationSpec:
    """Exact per-subgroup counts and per-subgroup severity histograms."""

    counts: dict[str, int]
    dr_hist: dict[str, tuple[int, int, int, int, int]]
    thresholds: RAThresholds = RAThresholds()
    mix: FactorMix = FactorMix()
    image_size: int = 32
    id_prefix: str = ""

    def validate(self) -> None:
        for sg in SUBGROUPS:
            c = self.counts.get(sg, 0)
            if c < 0:
                raise SpecificationError(f"negative count for {sg}")
            hist = self.dr_hist.get(sg, (0, 0, 0, 0, 0))
            if len(hist) != 5 or any(h < 0 for h in hist):
                raise SpecificationError(f"bad severity histogram for {sg}")
            if sum(hist) != c:
                raise SpecificationError(
                    f"severity histogram for {sg} sums to {sum(hist)}, expected {c}"
                )
            allowed = REFERABLE_LEVELS if sg in ("RL", "RD") else HEALTHY_LEVELS
            for level, h in enumerate(hist):
                if h > 0 and level not in allowed:
                    raise SpecificationError(
                        f"severity level {level} requested for subgroup {sg}"
                    )


def _draw_open(rng: np.random.Generator, lo: float, hi: float) -> float:
    """Uniform draw strictly inside (lo, hi)."""
    while True:
        v = lo + (hi - lo) * rng.uniform()
        if lo < v < hi:
            return v


def sample_factors(
    rng: np.random.Generator, subgroup: str, dr_level: int, thresholds: RAThresholds, mix: FactorMix
) -> FactorVector:
    darker = subgroup in ("HD", "RD")
    if darker:
        pigment = _draw_open(rng, thresholds.t_hi, 1.0)
    else:
        pigment = _draw_open(rng, 0.0, thresholds.t_lo)
    caliber = float(
        np.clip(mix.base + mix.pigment_weight * pigment + mix.noise * (2.0 * rng.uniform() - 1.0), 0.0, 1.0)
    )
    disc = float(
        np.clip(mix.base + mix.pigment_weight * pigment + mix.noise * (2.0 * rng.uniform() - 1.0), 0.0, 1.0)
    )
    lesion_seed = int(rng.integers(0, 2**64, dtype=np.uint64))
    return FactorVector(pigment, dr_level, caliber, disc, lesion_seed)


def sample_population(spec: PopulationSpec, seed: int) -> list[ImageSample]:
    """Emit exactly the requested per-subgroup counts and severity histograms.

    Deterministic in seed; per-sample streams are seed XOR an index hash, so
    parallel generation equals sequential generation. Appearance factors are
    never drawn inside the indeterminate band.
    """
    spec.validate()
    tasks: list[tuple[str, int]] = []
    for sg in SUBGROUPS:
        hist = spec.dr_hist.get(sg, (0, 0, 0, 0, 0))
        for level, count in enumerate(hist):
            tasks.extend([(sg, level)] * count)
    samples = []
    for idx, (sg, level) in enumerate(tasks):
        rng = np.random.Generator(np.random.PCG64(sample_seed(seed, idx)))
        factors = sample_factors(rng, sg, level, spec.thresholds, spec.mix)
        dr_level, referable, ra = assign_labels(factors, spec.thresholds)
        pixels = render(factors, spec.image_size)
        samples.append(
            ImageSample(
                sample_id=f"{spec.id_prefix}{idx:05d}",
                pixels=pixels,
                dr_level=dr_level,
                referable=referable,
                ra_label=ra,
                subgroup=sg,
                ra_provenance=PROV_MANUAL,
                factors=factors,
            )
        )
    return samples


def preprocess(pixels: np.ndarray, target_size: int) -> np.ndarray:
    """Crop to the square circumscribing the field of view, zero-pad where the
    view was clipped, and resize with bilinear interpolation."""
    px = np.asarray(pixels, dtype=np.float64)
    if px.ndim != 2 or px.size == 0:
        raise InvalidArgumentError("pixels must be a non-empty 2-D grid")
    if target_size < 1:
        raise InvalidArgumentError("target_size must be >= 1")
    mask = px > 1e-12
    if not mask.any():
        raise DegenerateInputError("no field of view found (all-background input)")
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    r0, r1 = int(rows[0]), int(rows[-1]) + 1
    c0, c1 = int(cols[0]), int(cols[-1]) + 1
    h, w = r1 - r0, c1 - c0
    side = max(h, w)
    square = np.zeros((side, side), dtype=np.float64)
    ro = (side - h) // 2
    co = (side - w) // 2
    square[ro : ro + h, co : co + w] = px[r0:r1, c0:c1]
    return _bilinear_resize(square, target_size)


def _bilinear_resize(img: np.ndarray, target: int) -> np.ndarray:
    src = img.shape[0]
    if src == target:
        return img.copy()
    # map output pixel centers onto input pixel-center coordinates
    coords = (np.arange(target) + 0.5) * (src / target) - 0.5
    lo = np.floor(coords).astype(int)
    frac = coords - lo
    lo0 = np.clip(lo, 0, src - 1)
    lo1 = np.clip(lo + 1, 0, src - 1)
    a = img[np.ix_(lo0, lo0)]
    b = img[np.ix_(lo0, lo1)]
    c = img[np.ix_(lo1, lo0)]
    d = img[np.ix_(lo1, lo1)]
    fx = frac[None, :]
    fy = frac[:, None]
    out = (
        a * (1 - fy) * (1 - fx)
        + b * (1 - fy) * fx
        + c * fy * (1 - fx)
        + d * fy * fx
    )
    return out
