"""Anatomical prototype construction: mean shape, template fitting, regions."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .mesh import AnatomyMesh, MeshError
from .meshfit import FitConfig, SurfaceIndex, fit_mesh, mean_surface_distance
from .template import template_mesh_arrays
from .volume import LabelVolume, VolumeError

__all__ = ["mean_shape", "build_prototype", "assign_regions"]

_CONN6 = ndimage.generate_binary_structure(3, 1)


def _connected(mask: np.ndarray) -> bool:
    _, n = ndimage.label(mask, structure=_CONN6)
    return n == 1


def mean_shape(masks: list[LabelVolume], organ_label: int) -> LabelVolume:
    """Mean of centroid-aligned binary organ masks, thresholded at 0.5.

    Alignment is integer translation only; all inputs must share spacing.
    """
    if not masks:
        raise VolumeError("mean_shape needs at least one mask")
    spacing = masks[0].spacing
    dims = masks[0].dims
    for m in masks[1:]:
        if m.spacing != spacing:
            raise VolumeError(f"spacing mismatch: {m.spacing} vs {spacing}")
        if m.dims != dims:
            raise VolumeError(f"dims mismatch: {m.dims} vs {dims}")
    binaries = [m.mask(organ_label) for m in masks]
    centroids = []
    for b in binaries:
        if not b.any():
            raise VolumeError(f"a mask contains no voxels of label {organ_label}")
        centroids.append(np.argwhere(b).mean(axis=0))
    ref = np.round(np.mean(centroids, axis=0)).astype(int)
    acc = np.zeros(dims, dtype=np.float64)
    for b, c in zip(binaries, centroids):
        shift = ref - np.round(c).astype(int)
        acc += np.roll(b.astype(np.float64), tuple(shift), axis=(0, 1, 2))
    acc /= len(binaries)
    mean_mask = acc >= 0.5
    if not mean_mask.any():
        raise VolumeError("mean shape is empty")
    if not _connected(mean_mask):
        raise VolumeError("mean shape is disconnected")
    return LabelVolume(mean_mask.astype(np.uint8), spacing)


def build_prototype(
    mean_mask: LabelVolume, cfg: FitConfig | None = None
) -> AnatomyMesh:
    """Fit the fixed 156-vertex template to a mean organ mask.

    The template starts as the bounding ellipsoid of the mask and is deformed
    by the mask-to-mesh loss. Fails if vertices end up on average further
    than 1.5 voxels from the mask surface.
    """
    cfg = cfg or FitConfig(max_iters=2000)
    tverts, tfaces = template_mesh_arrays()
    organ = mean_mask.mask(1)
    idx_pts = np.argwhere(organ)
    if idx_pts.size == 0:
        raise VolumeError("mean mask is empty")
    spacing = np.asarray(mean_mask.spacing)
    world = idx_pts * spacing
    center = world.mean(axis=0)
    half = (world.max(axis=0) - world.min(axis=0)) / 2.0
    half = np.maximum(half, spacing)
    init = AnatomyMesh(tverts * half + center, tfaces)
    fitted, _ = fit_mesh(init, mean_mask, 1, cfg)
    surf = SurfaceIndex.from_mask(mean_mask, 1)
    dist = mean_surface_distance(fitted, surf)
    limit = 1.5 * float(spacing.mean())
    if dist > limit:
        raise MeshError(
            f"prototype fit did not converge: mean surface distance "
            f"{dist:.3f} mm exceeds {limit:.3f} mm"
        )
    return fitted


def assign_regions(mesh: AnatomyMesh, head_end: np.ndarray) -> AnatomyMesh:
    """Re-index vertices along the principal axis so region ranges line up.

    After reordering, vertex positions are unchanged but sorting by
    projection onto the first principal axis (head extremity first) makes
    indices 1-48 the head, 49-90 the ventral body, 91-135 the dorsal body
    and 136-156 the tail.
    """
    verts = mesh.vertices
    centered = verts - verts.mean(axis=0)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    if s[0] - s[1] < 1e-9 * max(s[0], 1.0):
        raise MeshError("degenerate principal axis: point cloud is isotropic")
    axis = vt[0]
    if np.dot(np.asarray(head_end, dtype=np.float64) - verts.mean(axis=0), axis) > 0:
        axis = -axis
    proj = centered @ axis
    order = np.argsort(proj, kind="stable")
    inv = np.empty_like(order)
    inv[order] = np.arange(len(order))
    return AnatomyMesh(verts[order], inv[mesh.faces], mesh.region_counts)
