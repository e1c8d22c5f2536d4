"""Shared builders for tiny phantoms, machines and random LP instances."""

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from mtdplan.formulation import BlockLP, Criterion, CriterionSet, build_weighted_instance
from mtdplan.phantom import DoseInfluence, MachineModel, Phantom, ROI


def make_machine(B=1, N=1, J=1, dt=1.0, rho=0.5, tau=0.0, rate=1.0, t_max=100.0, angles=None):
    if angles is None:
        angles = tuple(360.0 * b / B for b in range(B))
    return MachineModel(num_beams=B, leaf_pairs=N, bixels_per_row=J,
                        traverse_time_s=dt, min_gap_fraction=rho, transmission=tau,
                        dose_rate=rate, max_time_s=t_max, beam_angles_deg=angles)


def line_phantom(rois):
    """1-D phantom with explicitly listed ROIs: {name: (kind, voxels, weights)}."""
    num = 1 + max(int(np.max(r[1])) for r in rois.values())
    roi_objs = [ROI(name=name, kind=kind, voxels=np.asarray(vox, dtype=np.int64),
                    weights=np.asarray(wts, dtype=float),
                    volume_cc=0.125 * len(vox))
                for name, (kind, vox, wts) in rois.items()]
    return Phantom(grid_dims=(num, 1, 1), voxel_size_mm=(5.0, 5.0, 5.0), rois=tuple(roi_objs))


def influence_from_dense(dense, machine):
    return DoseInfluence(matrix=sp.csr_matrix(np.asarray(dense, dtype=float)),
                         num_beams=machine.num_beams, leaf_pairs=machine.leaf_pairs,
                         bixels_per_row=machine.bixels_per_row)


def toy_dav_instance(num_voxels=2, volume=0.5, weights=(1.0,), hard_upper=None,
                     utopian_lower=None, machine=None, ctype="dav-min"):
    """Smallest meaningful instance: one criterion over a tiny line phantom."""
    machine = machine or make_machine(B=1, N=1, J=1, dt=1.0, rho=0.25, tau=0.0, t_max=50.0)
    vox = np.arange(num_voxels)
    phantom = line_phantom({"roi": ("target", vox, np.full(num_voxels, 1.0 / num_voxels))})
    rng = np.random.default_rng(7)
    dense = 0.5 + rng.random((num_voxels, machine.num_bixels))
    influence = influence_from_dense(dense, machine)
    criteria = CriterionSet([Criterion(roi="roi", ctype=ctype, volume=volume,
                                       hard_upper=hard_upper, utopian_lower=utopian_lower,
                                       objective=0, name="toy")])
    lp = build_weighted_instance(phantom, machine, influence, criteria, np.asarray(weights),
                                 name="toy")
    return phantom, machine, influence, criteria, lp


def linprog_reference(lp: BlockLP):
    """HiGHS solution of the same LP; returns the scipy OptimizeResult."""
    A = lp.matrix()
    bounds = [(float(lo), float(up) if np.isfinite(up) else None)
              for lo, up in zip(lp.lower, lp.upper)]
    return linprog(c=lp.objective_vector, A_ub=(-A).tocsc(), b_ub=-lp.rhs(),
                   bounds=bounds, method="highs")


_CTYPE_CYCLE = ("dav-min", "dav-max", "max", "min", "avg-min", "avg-max")


def random_block_instance(seed, max_voxels=50, max_bixels=20):
    """Random small planning LP with a mixed bag of criterion types.

    Bounds are calibrated against the dose achievable at maximum
    exposure so most draws are feasible; infeasible draws are still
    returned (the reference solver arbitrates).
    """
    rng = np.random.default_rng(seed)
    B = int(rng.integers(1, 3))
    N = int(rng.integers(1, 3))
    J = int(rng.integers(2, 1 + max(2, max_bixels // (B * N))))
    J = max(2, min(J, max_bixels // (B * N)))
    machine = make_machine(B=B, N=N, J=J,
                           dt=float(rng.uniform(0.2, 1.0)),
                           rho=float(rng.uniform(0.1, 0.7)),
                           tau=float(rng.choice([0.0, rng.uniform(0.005, 0.08)])),
                           rate=float(rng.uniform(0.5, 2.0)),
                           t_max=float(rng.uniform(30.0, 120.0)))
    nv = int(rng.integers(4, max_voxels + 1))
    dense = rng.random((nv, machine.num_bixels)) * (rng.random((nv, machine.num_bixels)) < 0.7)
    dense[0] += 0.2  # keep the matrix from being all zero
    influence_scale = float(rng.uniform(0.05, 0.3))
    dense *= influence_scale
    influence = None  # assembled after the phantom below

    half = max(2, nv // 2)
    w_a = rng.random(half) + 0.1
    w_b = rng.random(nv - half + 1) + 0.1
    phantom = line_phantom({
        "a": ("target", np.arange(half), w_a / w_a.sum()),
        "b": ("oar", np.arange(half - 1, nv), w_b / w_b.sum()),
    })
    influence = influence_from_dense(dense, machine)

    # Rough dose scale at a "typical" exposure to place bounds sensibly.
    typical_exposure = 0.3 * machine.max_time_s / machine.num_beams
    typical = dense.sum(axis=1) * machine.dose_rate * typical_exposure
    hi_scale = float(np.percentile(typical, 80)) + 1.0

    n_criteria = int(rng.integers(2, 5))
    types = list(rng.permutation(_CTYPE_CYCLE))[:n_criteria]
    criteria = []
    slot = 0
    for i, ctype in enumerate(types):
        roi = "a" if rng.random() < 0.6 else "b"
        volume = float(rng.uniform(0.15, 0.85)) if ctype in ("dav-min", "dav-max") else None
        in_objective = slot == 0 or rng.random() < 0.7
        kwargs = dict(roi=roi, ctype=ctype, volume=volume, name=f"c{i}",
                      objective=slot if in_objective else None)
        if ctype in ("dav-min", "max", "avg-min"):
            kwargs["hard_upper"] = float(rng.uniform(0.8, 2.5)) * hi_scale
            if rng.random() < 0.4:
                kwargs["utopian_lower"] = float(rng.uniform(0.0, 0.1)) * hi_scale
        else:
            kwargs["hard_lower"] = float(rng.uniform(0.02, 0.25)) * hi_scale
            if rng.random() < 0.4:
                kwargs["utopian_upper"] = float(rng.uniform(1.5, 3.0)) * hi_scale
        criteria.append(Criterion(**kwargs))
        if in_objective:
            slot += 1
    criterion_set = CriterionSet(criteria)
    weights = rng.random(criterion_set.num_slots) + 0.05
    weights = weights / weights.sum()
    lp = build_weighted_instance(phantom, machine, influence, criterion_set, weights,
                                 name=f"random-{seed}")
    return phantom, machine, influence, criterion_set, lp
