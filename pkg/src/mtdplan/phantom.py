"""Synthetic voxel phantoms and a pencil-beam dose influence matrix.

A phantom is a regular voxel grid carrying named regions of interest
(ROIs).  Each ROI stores the voxels it occupies together with strictly
positive relative-volume weights that sum to one, so volume-weighted
dose statistics are well defined even for partial-volume regions.

The dose influence matrix maps bixel fluence weights to voxel dose.  It
is a separable pencil-beam model: a Gaussian lateral profile around each
bixel ray combined with exponential depth attenuation.  Any nonnegative
linear map would serve the downstream optimization equally well; this
one is cheap, smooth and deterministic.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import distance_transform_edt

from .errors import PhantomError

# Subdivision per axis when estimating the overlap fraction between a
# voxel and an analytic shape (4**3 = 64 sample points per voxel).
_OVERLAP_SUBDIV = 4


@dataclass(frozen=True)
class ROI:
    """A named voxel subset with normalized relative-volume weights.

    Parameters
    ----------
    name : str
        Unique ROI name within a phantom.
    kind : str
        One of ``"target"``, ``"oar"`` or ``"ring"``.
    voxels : ndarray of int
        Flat voxel indices (C order) belonging to the ROI, no duplicates.
    weights : ndarray of float
        Relative volume per listed voxel; strictly positive, sums to 1.
    volume_cc : float
        Absolute ROI volume in cubic centimetres (used to convert
        volume criteria given in cc into fractions).
    """

    name: str
    kind: str
    voxels: np.ndarray
    weights: np.ndarray
    volume_cc: float = 0.0

    def __post_init__(self):
        voxels = np.asarray(self.voxels, dtype=np.int64)
        weights = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "voxels", voxels)
        object.__setattr__(self, "weights", weights)
        if voxels.size == 0:
            raise PhantomError(f"ROI {self.name!r} is empty")
        if voxels.size != np.unique(voxels).size:
            raise PhantomError(f"ROI {self.name!r} has duplicate voxels")
        if weights.shape != voxels.shape:
            raise PhantomError(f"ROI {self.name!r}: weights/voxels length mismatch")
        if np.any(weights <= 0.0):
            raise PhantomError(f"ROI {self.name!r} has non-positive weights")
        if abs(float(weights.sum()) - 1.0) > 1e-12:
            raise PhantomError(f"ROI {self.name!r}: weights sum to {weights.sum()!r}, not 1")

    @staticmethod
    def from_raw_volumes(name: str, kind: str, voxels, raw_volumes, volume_cc: float | None = None) -> "ROI":
        """Build an ROI from raw (unnormalized) per-voxel overlap volumes."""
        raw = np.asarray(raw_volumes, dtype=float)
        total = float(raw.sum())
        if total <= 0.0:
            raise PhantomError(f"ROI {name!r}: raw volumes sum to zero")
        vol_cc = float(volume_cc) if volume_cc is not None else total / 1000.0
        return ROI(name=name, kind=kind, voxels=np.asarray(voxels, dtype=np.int64),
                   weights=raw / total, volume_cc=vol_cc)


@dataclass(frozen=True)
class Phantom:
    """Voxel grid plus ROIs.  Immutable after construction."""

    grid_dims: tuple[int, int, int]
    voxel_size_mm: tuple[float, float, float]
    rois: tuple[ROI, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.grid_dims)
        size = tuple(float(s) for s in self.voxel_size_mm)
        object.__setattr__(self, "grid_dims", dims)
        object.__setattr__(self, "voxel_size_mm", size)
        object.__setattr__(self, "rois", tuple(self.rois))
        if any(d <= 0 for d in dims):
            raise PhantomError(f"grid dims must be positive, got {dims}")
        if any(s <= 0 for s in size):
            raise PhantomError(f"voxel size must be positive, got {size}")
        names = [r.name for r in self.rois]
        if len(names) != len(set(names)):
            raise PhantomError("duplicate ROI names")
        n = self.num_voxels
        for roi in self.rois:
            if roi.voxels.min() < 0 or roi.voxels.max() >= n:
                raise PhantomError(f"ROI {roi.name!r} references voxels outside the grid")

    @property
    def num_voxels(self) -> int:
        nx, ny, nz = self.grid_dims
        return nx * ny * nz

    @property
    def voxel_volume_cc(self) -> float:
        sx, sy, sz = self.voxel_size_mm
        return sx * sy * sz / 1000.0

    def roi(self, name: str) -> ROI:
        for roi in self.rois:
            if roi.name == name:
                return roi
        raise PhantomError(f"unknown ROI {name!r}")

    def has_roi(self, name: str) -> bool:
        return any(r.name == name for r in self.rois)

    def voxel_centers_mm(self) -> np.ndarray:
        """Centers of all voxels, shape (num_voxels, 3), C-order indexing."""
        nx, ny, nz = self.grid_dims
        sx, sy, sz = self.voxel_size_mm
        ix, iy, iz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
        centers = np.empty((self.num_voxels, 3))
        centers[:, 0] = (ix.ravel() + 0.5) * sx
        centers[:, 1] = (iy.ravel() + 0.5) * sy
        centers[:, 2] = (iz.ravel() + 0.5) * sz
        return centers

    def extent_mm(self) -> np.ndarray:
        return np.asarray(self.grid_dims, dtype=float) * np.asarray(self.voxel_size_mm, dtype=float)


@dataclass(frozen=True)
class MachineModel:
    """Beam/MLC geometry and delivery parameters.

    Symbols follow the sliding-window trajectory model: ``num_beams`` B,
    ``leaf_pairs`` N, ``bixels_per_row`` J, bixel traverse time
    ``traverse_time_s``, minimum-gap fraction ``min_gap_fraction`` in
    (0,1), leaf ``transmission`` in [0,1), constant ``dose_rate`` and
    total treatment time budget ``max_time_s``.
    """

    num_beams: int
    leaf_pairs: int
    bixels_per_row: int
    traverse_time_s: float
    min_gap_fraction: float
    transmission: float
    dose_rate: float
    max_time_s: float
    beam_angles_deg: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "beam_angles_deg", tuple(float(a) for a in self.beam_angles_deg))
        if self.num_beams <= 0 or self.leaf_pairs <= 0 or self.bixels_per_row <= 0:
            raise PhantomError("machine dimensions must be positive")
        if len(self.beam_angles_deg) != self.num_beams:
            raise PhantomError("beam_angles_deg length must equal num_beams")
        if self.traverse_time_s <= 0:
            raise PhantomError("traverse_time_s must be > 0")
        if not (0.0 < self.min_gap_fraction < 1.0):
            raise PhantomError("min_gap_fraction must lie in (0, 1)")
        if not (0.0 <= self.transmission < 1.0):
            raise PhantomError("transmission must lie in [0, 1)")
        if self.dose_rate <= 0:
            raise PhantomError("dose_rate must be > 0")
        if self.max_time_s <= 0:
            raise PhantomError("max_time_s must be > 0")

    @property
    def num_bixels(self) -> int:
        return self.num_beams * self.leaf_pairs * self.bixels_per_row

    def bixel_index(self, b: int, n: int, j: int) -> int:
        """Flat column index of bixel (beam b, leaf pair n, position j)."""
        J = self.bixels_per_row
        return (b * self.leaf_pairs + n) * J + j


@dataclass(frozen=True)
class KernelParams:
    """Pencil-beam kernel and fluence-grid geometry."""

    lateral_sigma_mm: float = 3.0
    attenuation_per_mm: float = 0.005
    bixel_width_mm: float = 5.0
    leaf_width_mm: float = 10.0
    cutoff_sigmas: float = 3.0
    output_factor: float = 1.0

    def __post_init__(self):
        if self.lateral_sigma_mm <= 0:
            raise PhantomError("lateral_sigma_mm must be > 0")
        if self.attenuation_per_mm < 0:
            raise PhantomError("attenuation_per_mm must be >= 0")
        if self.bixel_width_mm <= 0 or self.leaf_width_mm <= 0:
            raise PhantomError("bixel/leaf widths must be > 0")
        if self.cutoff_sigmas <= 0:
            raise PhantomError("cutoff_sigmas must be > 0")
        if self.output_factor <= 0:
            raise PhantomError("output_factor must be > 0")


@dataclass(frozen=True)
class DoseInfluence:
    """Sparse nonnegative dose deposition matrix (voxels x bixels)."""

    matrix: sp.csr_matrix
    num_beams: int
    leaf_pairs: int
    bixels_per_row: int

    def bixel_index(self, b: int, n: int, j: int) -> int:
        return (b * self.leaf_pairs + n) * self.bixels_per_row + j

    @property
    def num_voxels(self) -> int:
        return self.matrix.shape[0]

    def per_beam_row_sums(self) -> sp.csr_matrix:
        """Matrix of per-beam row sums, shape (voxels, num_beams).

        Column b equals the sum of all bixel columns of beam b; this is
        the dose response to one extra second of beam-on time per unit
        transmission-scaled dose rate.
        """
        per_beam = self.leaf_pairs * self.bixels_per_row
        rep = sp.csr_matrix(
            (np.ones(self.matrix.shape[1]),
             (np.arange(self.matrix.shape[1]),
              np.repeat(np.arange(self.num_beams), per_beam))),
            shape=(self.matrix.shape[1], self.num_beams),
        )
        return (self.matrix @ rep).tocsr()


# ---------------------------------------------------------------------------
# Phantom construction


@dataclass(frozen=True)
class RoiShapeSpec:
    """Analytic ROI shape; only the fields of the active kind are set.

    ``kind_of_shape`` is one of ``"sphere"``, ``"box"``, ``"shell"`` or
    ``"ring"``.  Rings are voxel shells at a distance band (in mm) from
    an existing target ROI; the other shapes are absolute geometry.
    """

    kind_of_shape: str
    center_mm: tuple[float, float, float] | None = None
    radius_mm: float | None = None
    size_mm: tuple[float, float, float] | None = None
    inner_radius_mm: float | None = None
    outer_radius_mm: float | None = None
    around: str | None = None
    inner_mm: float | None = None
    outer_mm: float | None = None


@dataclass(frozen=True)
class RoiSpec:
    name: str
    kind: str
    shape: RoiShapeSpec


@dataclass(frozen=True)
class PhantomSpec:
    grid_dims: tuple[int, int, int]
    voxel_size_mm: tuple[float, float, float]
    rois: tuple[RoiSpec, ...]


def _subsample_offsets(voxel_size: np.ndarray) -> np.ndarray:
    """Regular sub-voxel sample offsets relative to the voxel center."""
    k = _OVERLAP_SUBDIV
    t = (np.arange(k) + 0.5) / k - 0.5
    ox, oy, oz = np.meshgrid(t * voxel_size[0], t * voxel_size[1], t * voxel_size[2], indexing="ij")
    return np.stack([ox.ravel(), oy.ravel(), oz.ravel()], axis=1)


def _shape_membership(shape: RoiShapeSpec, points: np.ndarray) -> np.ndarray:
    """Boolean membership of points (N,3) in an absolute shape."""
    if shape.kind_of_shape == "sphere":
        c = np.asarray(shape.center_mm, dtype=float)
        d2 = np.sum((points - c) ** 2, axis=1)
        return d2 <= float(shape.radius_mm) ** 2
    if shape.kind_of_shape == "box":
        c = np.asarray(shape.center_mm, dtype=float)
        half = np.asarray(shape.size_mm, dtype=float) / 2.0
        return np.all(np.abs(points - c) <= half, axis=1)
    if shape.kind_of_shape == "shell":
        c = np.asarray(shape.center_mm, dtype=float)
        d = np.sqrt(np.sum((points - c) ** 2, axis=1))
        return (d > float(shape.inner_radius_mm)) & (d <= float(shape.outer_radius_mm))
    raise PhantomError(f"unknown shape kind {shape.kind_of_shape!r}")


def _voxelize_shape(phantom_dims, voxel_size, shape: RoiShapeSpec):
    """Return (voxel indices, raw overlap volumes in mm^3) for a shape.

    Membership is decided by the voxel center (keeps e.g. a sphere and
    the shell around it disjoint); the overlap fraction of each member
    voxel is estimated on a regular sub-voxel grid and floored at half a
    sample so degenerate shapes keep positive weight.
    """
    dims = np.asarray(phantom_dims, dtype=int)
    vsize = np.asarray(voxel_size, dtype=float)
    nx, ny, nz = dims
    ix, iy, iz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    centers = np.stack([(ix.ravel() + 0.5) * vsize[0],
                        (iy.ravel() + 0.5) * vsize[1],
                        (iz.ravel() + 0.5) * vsize[2]], axis=1)
    member = _shape_membership(shape, centers)
    idx = np.flatnonzero(member)
    if idx.size == 0:
        return idx, np.empty(0)

    offsets = _subsample_offsets(vsize)
    n_sub = offsets.shape[0]
    frac = np.empty(idx.size)
    for out, i in enumerate(idx):
        pts = centers[i] + offsets
        frac[out] = np.count_nonzero(_shape_membership(shape, pts)) / n_sub
    frac = np.maximum(frac, 0.5 / n_sub)
    voxel_volume = float(np.prod(vsize))
    return idx, frac * voxel_volume


def _voxelize_ring(phantom_dims, voxel_size, shape: RoiShapeSpec, target: ROI):
    """Voxels whose center lies within (inner, outer] mm of the target set."""
    dims = tuple(int(d) for d in phantom_dims)
    mask = np.zeros(dims, dtype=bool)
    mask.ravel()[target.voxels] = True
    dist = distance_transform_edt(~mask, sampling=voxel_size)
    inner = float(shape.inner_mm)
    outer = float(shape.outer_mm)
    if not (0.0 <= inner < outer):
        raise PhantomError("ring requires 0 <= inner_mm < outer_mm")
    band = (dist.ravel() > inner) & (dist.ravel() <= outer) & (dist.ravel() > 0.0)
    idx = np.flatnonzero(band)
    voxel_volume = float(np.prod(np.asarray(voxel_size, dtype=float)))
    return idx, np.full(idx.size, voxel_volume)


def build_phantom(spec: PhantomSpec) -> Phantom:
    """Voxelize a phantom spec into a :class:`Phantom`.

    Rings are generated after all other ROIs so they can reference a
    target by name.  Raises :class:`PhantomError` when an ROI voxelizes
    to the empty set or when names collide.
    """
    dims = tuple(int(d) for d in spec.grid_dims)
    vsize = tuple(float(s) for s in spec.voxel_size_mm)
    if any(d <= 0 for d in dims):
        raise PhantomError(f"grid dims must be positive, got {dims}")

    names = [r.name for r in spec.rois]
    if len(names) != len(set(names)):
        raise PhantomError("duplicate ROI names in phantom spec")

    rois: dict[str, ROI] = {}
    rings: list[RoiSpec] = []
    for roi_spec in spec.rois:
        if roi_spec.shape.kind_of_shape == "ring":
            rings.append(roi_spec)
            continue
        idx, raw = _voxelize_shape(dims, vsize, roi_spec.shape)
        if idx.size == 0:
            raise PhantomError(f"ROI {roi_spec.name!r} is empty after voxelization")
        rois[roi_spec.name] = ROI.from_raw_volumes(roi_spec.name, roi_spec.kind, idx, raw)

    for roi_spec in rings:
        around = roi_spec.shape.around
        if around not in rois:
            raise PhantomError(f"ring {roi_spec.name!r} references unknown ROI {around!r}")
        idx, raw = _voxelize_ring(dims, vsize, roi_spec.shape, rois[around])
        if idx.size == 0:
            raise PhantomError(f"ROI {roi_spec.name!r} is empty after voxelization")
        rois[roi_spec.name] = ROI.from_raw_volumes(roi_spec.name, roi_spec.kind, idx, raw)

    ordered = tuple(rois[name] for name in names)
    return Phantom(grid_dims=dims, voxel_size_mm=vsize, rois=ordered)


def roi_weight_vector(phantom: Phantom, roi_name: str) -> np.ndarray:
    """Dense relative-volume vector over all voxels; zero outside the ROI."""
    roi = phantom.roi(roi_name)
    w = np.zeros(phantom.num_voxels)
    w[roi.voxels] = roi.weights
    return w


# ---------------------------------------------------------------------------
# Dose influence


def compute_dose_influence(phantom: Phantom, machine: MachineModel, kernel: KernelParams) -> DoseInfluence:
    """Pencil-beam dose influence matrix for a phantom/machine pair.

    Each column holds the dose response of one bixel: a Gaussian lateral
    profile of the configured sigma around the bixel ray, attenuated
    exponentially with depth along the beam direction.  Beams are
    parallel, lie in the x-y plane at the configured gantry angles and
    share an isocenter at the grid center; leaf rows are stacked along
    z.  The result depends only on geometry and kernel parameters, never
    on transmission or dose rate, and is bitwise deterministic.
    """
    centers = phantom.voxel_centers_mm()
    grid_center = phantom.extent_mm() / 2.0
    rel = centers - grid_center

    B, N, J = machine.num_beams, machine.leaf_pairs, machine.bixels_per_row
    t_off = (np.arange(J) - (J - 1) / 2.0) * kernel.bixel_width_mm
    z_off = (np.arange(N) - (N - 1) / 2.0) * kernel.leaf_width_mm
    cutoff2 = (kernel.cutoff_sigmas * kernel.lateral_sigma_mm) ** 2
    inv_two_sigma2 = 1.0 / (2.0 * kernel.lateral_sigma_mm ** 2)

    # Half-diagonal bounds the entry-plane offset for any beam angle.
    half_diag = float(np.linalg.norm(phantom.extent_mm()) / 2.0)

    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []
    beam_nnz = np.zeros(B, dtype=np.int64)
    for b, angle in enumerate(machine.beam_angles_deg):
        theta = np.deg2rad(angle)
        direction = np.array([np.cos(theta), np.sin(theta), 0.0])
        transverse = np.array([-np.sin(theta), np.cos(theta), 0.0])
        depth = rel @ direction + half_diag
        proj_t = rel @ transverse
        proj_z = rel[:, 2]
        atten = kernel.output_factor * np.exp(-kernel.attenuation_per_mm * depth)
        for n in range(N):
            dz2 = (proj_z - z_off[n]) ** 2
            for j in range(J):
                lat2 = (proj_t - t_off[j]) ** 2 + dz2
                mask = lat2 <= cutoff2
                if not np.any(mask):
                    continue
                idx = np.flatnonzero(mask)
                col = machine.bixel_index(b, n, j)
                rows.append(idx)
                cols.append(np.full(idx.size, col, dtype=np.int64))
                vals.append(atten[idx] * np.exp(-lat2[idx] * inv_two_sigma2))
                beam_nnz[b] += idx.size

    for b in range(B):
        if beam_nnz[b] == 0:
            raise PhantomError(f"beam {b} misses the phantom grid entirely")

    if rows:
        matrix = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(phantom.num_voxels, machine.num_bixels),
        )
    else:  # unreachable given the per-beam check, kept for shape safety
        matrix = sp.csr_matrix((phantom.num_voxels, machine.num_bixels))
    matrix.sort_indices()
    return DoseInfluence(matrix=matrix, num_beams=B, leaf_pairs=N, bixels_per_row=J)


def influence_content_hash(phantom: Phantom, machine: MachineModel, kernel: KernelParams) -> str:
    """Content hash of everything :func:`compute_dose_influence` depends on."""
    h = hashlib.sha256()
    payload = {
        "grid_dims": list(phantom.grid_dims),
        "voxel_size_mm": list(phantom.voxel_size_mm),
        "beams": machine.num_beams,
        "leaf_pairs": machine.leaf_pairs,
        "bixels_per_row": machine.bixels_per_row,
        "angles": list(machine.beam_angles_deg),
        "kernel": [kernel.lateral_sigma_mm, kernel.attenuation_per_mm,
                   kernel.bixel_width_mm, kernel.leaf_width_mm,
                   kernel.cutoff_sigmas, kernel.output_factor],
    }
    h.update(json.dumps(payload, sort_keys=True).encode())
    for roi in phantom.rois:
        h.update(roi.name.encode())
        h.update(roi.voxels.tobytes())
        h.update(roi.weights.tobytes())
    return h.hexdigest()


def load_or_compute_dose_influence(phantom: Phantom, machine: MachineModel, kernel: KernelParams,
                                   cache_dir: str | None = None) -> DoseInfluence:
    """Compute the dose influence, consulting the binary cache if enabled.

    The cache directory comes from ``cache_dir`` or the ``MTD_CACHE_DIR``
    environment variable; with neither set the matrix is recomputed.
    """
    cache_dir = cache_dir or os.environ.get("MTD_CACHE_DIR")
    if not cache_dir:
        return compute_dose_influence(phantom, machine, kernel)
    key = influence_content_hash(phantom, machine, kernel)
    path = os.path.join(cache_dir, f"dose_influence_{key}.npz")
    if os.path.exists(path):
        matrix = sp.load_npz(path).tocsr()
        return DoseInfluence(matrix=matrix, num_beams=machine.num_beams,
                             leaf_pairs=machine.leaf_pairs, bixels_per_row=machine.bixels_per_row)
    influence = compute_dose_influence(phantom, machine, kernel)
    os.makedirs(cache_dir, exist_ok=True)
    tmp = path + ".tmp.npz"
    sp.save_npz(tmp, influence.matrix.tocoo())
    os.replace(tmp, path)
    return influence
