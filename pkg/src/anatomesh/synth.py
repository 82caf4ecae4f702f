"""Synthetic organ/mass volumes with anatomically constrained mass placement.

The generated organ is a bent swept capsule with an enlarged head bulb.
Default case classes exercise the spatial priors the classifier should learn:

  1  no mass                      -> Discharge
  2  blob confined to the head    -> Surgery
  3  blob outside the head        -> Monitoring
  4  diffuse tube along the organ -> Surgery

Classes 2 and 3 share the same voxel label (blob), so pixel voting cannot
separate them; only geometry can.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .mesh import REGION_COUNTS, REGION_NAMES
from .volume import LabelVolume, ProbVolume, VolumeError, load_volume, save_volume

__all__ = [
    "MassSpec",
    "SynthCase",
    "SynthConfig",
    "SynthError",
    "DEFAULT_CLASSES",
    "MANAGEMENT_BY_CLASS",
    "gen_organ",
    "implant_mass",
    "soften",
    "gen_dataset",
    "save_case",
    "load_case",
]

ORGAN_LABEL = 1
BLOB_LABEL = 2
TUBE_LABEL = 3
N_CHANNELS = 4  # background, organ, blob mass, tube mass

MANAGEMENTS = ("Surgery", "Monitoring", "Discharge")


class SynthError(RuntimeError):
    """Synthetic generation failure (empty, clipped or unplaceable shape)."""


@dataclass(frozen=True)
class MassSpec:
    class_id: int
    allowed_regions: tuple[str, ...]
    size_range: tuple[float, float]  # voxel radius
    diffuse: bool = False
    voxel_label: int = BLOB_LABEL

    def __post_init__(self):
        if not self.allowed_regions:
            raise SynthError("allowed_regions must be non-empty")
        for r in self.allowed_regions:
            if r not in REGION_NAMES:
                raise SynthError(f"unknown region {r!r}")
        if self.size_range[0] <= 0 or self.size_range[1] < self.size_range[0]:
            raise SynthError(f"invalid size range {self.size_range}")


# class id -> (spec or None for the no-mass class, management label)
DEFAULT_CLASSES: dict[int, tuple[MassSpec | None, str]] = {
    1: (None, "Discharge"),
    2: (MassSpec(2, ("Head",), (3.0, 5.0)), "Surgery"),
    3: (MassSpec(3, ("VentralBody", "DorsalBody", "Tail"), (3.0, 5.0)), "Monitoring"),
    4: (MassSpec(4, REGION_NAMES, (1.5, 2.0), diffuse=True, voxel_label=TUBE_LABEL),
        "Surgery"),
}

MANAGEMENT_BY_CLASS = {c: mgmt for c, (_, mgmt) in DEFAULT_CLASSES.items()}


@dataclass
class SynthCase:
    labels: LabelVolume
    probs: ProbVolume
    class_id: int
    management: str
    head_end: np.ndarray
    seed: int


@dataclass
class SynthConfig:
    grid: int = 48
    noise: float = 0.2
    organ_half_length: float = 0.62  # fraction of half-grid
    bend: float = 5.0  # voxels of centerline deflection
    body_radius: float = 4.0
    head_radius: float = 6.0
    class_mix: tuple[float, ...] = (0.25, 0.25, 0.25, 0.25)
    retry_limit: int = 10

    def __post_init__(self):
        if self.grid < 32:
            raise SynthError("grid must be at least 32 voxels per side")
        if abs(sum(self.class_mix) - 1.0) > 1e-9:
            raise SynthError("class mix must sum to 1")


def _centerline(cfg: SynthConfig, n: int = 160) -> tuple[np.ndarray, np.ndarray]:
    """Centerline sample points (n, 3) and per-sample radii, in voxel units.

    Runs along x with a quadratic bend in y; t=0 is the head end. The y
    offset vanishes for bend=0 so the shape is mirror-symmetric then.
    """
    g = cfg.grid
    c = (g - 1) / 2.0
    t = np.linspace(0.0, 1.0, n)
    half = cfg.organ_half_length * g / 2.0
    x = c - half + 2.0 * half * t
    y = c + cfg.bend * (4.0 * t * (1.0 - t) - 1.0)
    z = np.full(n, c)
    # bulbous head tapering toward the tail
    radii = cfg.body_radius + (cfg.head_radius - cfg.body_radius) * np.exp(-t / 0.15)
    radii *= 1.0 - 0.35 * t
    return np.stack([x, y, z], axis=1), radii


def _sweep_mask(grid: int, points: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """Voxels within the swept varying-radius capsule."""
    coords = np.indices((grid, grid, grid)).reshape(3, -1).T.astype(np.float64)
    inside = np.zeros(len(coords), dtype=bool)
    for chunk in range(0, len(points), 32):
        p = points[chunk : chunk + 32]
        r = radii[chunk : chunk + 32]
        d2 = ((coords[:, None, :] - p[None, :, :]) ** 2).sum(axis=2)
        inside |= (d2 <= (r**2)[None, :]).any(axis=1)
    return inside.reshape(grid, grid, grid)


_CONN6 = ndimage.generate_binary_structure(3, 1)


def gen_organ(seed: int, cfg: SynthConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Binary organ mask and the head-end point (world coords, unit spacing).

    The base shape is deterministic per config; the seed jitters bend and
    radii slightly so cases differ.
    """
    cfg = cfg or SynthConfig()
    rng = np.random.default_rng(seed)
    jcfg = SynthConfig(
        grid=cfg.grid,
        noise=cfg.noise,
        organ_half_length=cfg.organ_half_length * rng.uniform(0.92, 1.0),
        bend=cfg.bend * rng.uniform(0.8, 1.2) if cfg.bend else 0.0,
        body_radius=cfg.body_radius * rng.uniform(0.9, 1.1),
        head_radius=cfg.head_radius * rng.uniform(0.9, 1.1),
        class_mix=cfg.class_mix,
        retry_limit=cfg.retry_limit,
    )
    points, radii = _centerline(jcfg)
    mask = _sweep_mask(cfg.grid, points, radii)
    if not mask.any():
        raise SynthError("generated organ is empty")
    border = np.zeros_like(mask)
    border[[0, -1], :, :] = border[:, [0, -1], :] = border[:, :, [0, -1]] = True
    if (mask & border).any():
        raise SynthError("generated organ clips the grid boundary")
    _, n = ndimage.label(mask, structure=_CONN6)
    if n != 1:
        raise SynthError("generated organ is disconnected")
    return mask, points[0].copy()


def _region_band(t: float) -> str:
    """Anatomical region of a centerline parameter, by vertex-count fractions."""
    bounds = np.cumsum(REGION_COUNTS) / sum(REGION_COUNTS)
    for name, hi in zip(REGION_NAMES, bounds):
        if t <= hi:
            return name
    return REGION_NAMES[-1]


def _centerline_param(point: np.ndarray, points: np.ndarray) -> float:
    d = np.linalg.norm(points - point, axis=1)
    return float(d.argmin()) / (len(points) - 1)


def implant_mass(
    organ: np.ndarray,
    head_end: np.ndarray,
    spec: MassSpec,
    seed: int,
    cfg: SynthConfig | None = None,
) -> LabelVolume:
    """Place a mass of the given spec inside the organ, label per spec.

    Blob masses are ellipsoids centered on an allowed centerline band; at most
    20% of the mass may protrude outside the organ. Diffuse masses are a thin
    tube spanning the organ centerline.
    """
    cfg = cfg or SynthConfig(grid=organ.shape[0])
    rng = np.random.default_rng(seed)
    points, _ = _centerline(cfg)
    grid = organ.shape[0]
    labels = organ.astype(np.uint8) * ORGAN_LABEL
    if spec.size_range[1] <= 0:
        raise SynthError("mass size range must be positive")
    bounds = np.cumsum(REGION_COUNTS) / sum(REGION_COUNTS)
    lows = np.concatenate([[0.0], bounds[:-1]])
    allowed = [
        (lo, hi)
        for name, lo, hi in zip(REGION_NAMES, lows, bounds)
        if name in spec.allowed_regions
    ]
    if spec.diffuse:
        radius = rng.uniform(*spec.size_range)
        span = points[int(0.08 * len(points)) : int(0.92 * len(points))]
        tube = _sweep_mask(grid, span, np.full(len(span), radius))
        tube &= organ
        if not tube.any():
            raise SynthError("diffuse tube does not intersect the organ")
        labels[tube] = spec.voxel_label
        return LabelVolume(labels, (1.0, 1.0, 1.0))
    for _ in range(cfg.retry_limit):
        lo, hi = allowed[rng.integers(len(allowed))]
        t = rng.uniform(lo + 0.02, hi - 0.02)
        center = points[int(round(t * (len(points) - 1)))]
        radius = rng.uniform(*spec.size_range)
        axes = radius * rng.uniform(0.8, 1.2, size=3)
        coords = np.indices(organ.shape).reshape(3, -1).T
        inside = (((coords - center) / axes) ** 2).sum(axis=1) <= 1.0
        mass = inside.reshape(organ.shape)
        if not mass.any():
            continue
        outside = np.count_nonzero(mass & ~organ)
        if outside > 0.2 * np.count_nonzero(mass):
            continue
        centroid = np.argwhere(mass).mean(axis=0)
        if _region_band(_centerline_param(centroid, points)) not in spec.allowed_regions:
            continue
        labels[mass] = spec.voxel_label
        return LabelVolume(labels, (1.0, 1.0, 1.0))
    raise SynthError(
        f"could not place a mass of class {spec.class_id} within "
        f"{spec.allowed_regions} after {cfg.retry_limit} tries"
    )


def soften(labels: LabelVolume, noise: float, seed: int, channels: int = N_CHANNELS) -> ProbVolume:
    """Noisy probability stand-in for a segmentation softmax.

    One-hot labels get a 1-voxel boundary blur, then are blended with seeded
    random probability vectors with weight ``noise``.
    """
    if not 0.0 <= noise < 0.5:
        raise VolumeError(f"noise must be in [0, 0.5), got {noise}")
    one_hot = np.eye(channels, dtype=np.float64)[labels.data]
    if noise > 0.0:
        blurred = np.empty_like(one_hot)
        for k in range(channels):
            blurred[..., k] = ndimage.uniform_filter(one_hot[..., k], size=3, mode="nearest")
        one_hot = 0.75 * one_hot + 0.25 * blurred
        rng = np.random.default_rng(seed)
        r = rng.random(one_hot.shape)
        r /= r.sum(axis=-1, keepdims=True)
        one_hot = (1.0 - noise) * one_hot + noise * r
    one_hot /= one_hot.sum(axis=-1, keepdims=True)
    return ProbVolume(one_hot.astype(np.float32), labels.spacing)


def gen_case(
    class_id: int, seed: int, cfg: SynthConfig | None = None,
    classes: dict[int, tuple[MassSpec | None, str]] | None = None,
) -> SynthCase:
    cfg = cfg or SynthConfig()
    classes = classes or DEFAULT_CLASSES
    spec, management = classes[class_id]
    last_err = None
    for attempt in range(cfg.retry_limit):
        sub = int(np.random.default_rng((seed, attempt)).integers(2**31))
        try:
            organ, head_end = gen_organ(sub, cfg)
            if spec is None:
                labels = LabelVolume(organ.astype(np.uint8) * ORGAN_LABEL, (1.0, 1.0, 1.0))
            else:
                labels = implant_mass(organ, head_end, spec, sub + 1, cfg)
            probs = soften(labels, cfg.noise, sub + 2)
            return SynthCase(labels, probs, class_id, management, head_end, seed)
        except SynthError as exc:
            last_err = exc
    raise SynthError(f"case generation failed after {cfg.retry_limit} retries: {last_err}")


def gen_dataset(
    n: int, seed: int, cfg: SynthConfig | None = None,
    classes: dict[int, tuple[MassSpec | None, str]] | None = None,
) -> list[SynthCase]:
    """Deterministic dataset of n cases drawn from the configured class mix."""
    if n < 1:
        raise SynthError("dataset size must be >= 1")
    cfg = cfg or SynthConfig()
    classes = classes or DEFAULT_CLASSES
    ids = sorted(classes)
    mix = np.asarray(cfg.class_mix, dtype=np.float64)
    if len(mix) != len(ids):
        raise SynthError("class mix length does not match class count")
    rng = np.random.default_rng(seed)
    cases = []
    for i in range(n):
        cid = ids[rng.choice(len(ids), p=mix)]
        cases.append(gen_case(cid, int(np.random.default_rng((seed, i, 7)).integers(2**31)), cfg, classes))
    return cases


def save_case(case: SynthCase, directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    save_volume(case.labels, os.path.join(directory, "labels"))
    save_volume(case.probs, os.path.join(directory, "probs"))
    hx, hy, hz = case.head_end
    with open(os.path.join(directory, "case.txt"), "w") as f:
        f.write(f"class {case.class_id}\n")
        f.write(f"management {case.management}\n")
        f.write(f"head_end {hx:.9g} {hy:.9g} {hz:.9g}\n")
        f.write(f"seed {case.seed}\n")


def load_case(directory: str) -> SynthCase:
    labels = load_volume(os.path.join(directory, "labels"))
    probs = load_volume(os.path.join(directory, "probs"))
    fields = {}
    with open(os.path.join(directory, "case.txt")) as f:
        for line in f:
            key, *rest = line.split()
            fields[key] = rest
    return SynthCase(
        labels, probs,
        int(fields["class"][0]), fields["management"][0],
        np.array([float(v) for v in fields["head_end"]]),
        int(fields["seed"][0]),
    )
