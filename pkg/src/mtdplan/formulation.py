"""Weighted-sum linear program with the voxelwise block partition.

A planning criterion bounds or optimizes one dose statistic of one ROI.
Dose-at-volume criteria are handled through their mean-tail-dose
relaxations, which linearize with one scalar ``alpha`` and one
per-voxel ``eta`` vector per criterion:

  minimize ("dav-min"):   alpha + (1/v) * sum_i  w_i * eta_i  <=  xi,
                          eta_i >= d_i - alpha,  eta_i >= 0
  maximize ("dav-max"):   alpha - (1/(1-v)) * sum_i w_i * eta_i  >=  xi,
                          eta_i >= alpha - d_i,  eta_i >= 0

Max/min-dose criteria bound every voxel (``d_i <= xi`` / ``d_i >= xi``)
and average criteria bound the volume-weighted mean.  Hard dose bounds
land on ``xi`` as variable bounds; so do the utopian levels that remove
further optimizing incentive.  The voxel dose is substituted out via the
trajectory-to-dose map, so the LP variables are ``(l, r, T, xi, alpha,
eta)`` and every voxel-sized coefficient row couples to trajectory-space
columns only.

The constraint matrix is kept in the partition the solver exploits::

    ( A11  A12 )   rows without voxelwise components x columns (l,r,T,xi,alpha)
    ( A21  A22 )   voxelwise rows; A22 = [0 I]^T exactly, the zero part
                   from max/min-dose rows and the identity from the eta rows.

All rows are oriented ``a . x >= rhs``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .dmlc import Trajectories, build_deliverability_constraints, num_trajectory_variables
from .errors import FormulationError
from .phantom import DoseInfluence, MachineModel, Phantom

MINIMIZED_TYPES = ("dav-min", "max", "avg-min")
MAXIMIZED_TYPES = ("dav-max", "min", "avg-max")
DAV_TYPES = ("dav-min", "dav-max")
CRITERION_TYPES = MINIMIZED_TYPES + MAXIMIZED_TYPES


@dataclass(frozen=True)
class Criterion:
    """One planning criterion (a Table-style row).

    Minimized types carry ``hard_upper`` (the hard bound) and optionally
    ``utopian_lower``; maximized types carry ``hard_lower`` and
    optionally ``utopian_upper``.  ``objective`` is the weight-slot
    index this criterion contributes to, or ``None`` for a pure
    constraint: excluding a criterion from the objective removes all
    optimizing incentive and leaves only its hard dose bound.
    """

    roi: str
    ctype: str
    volume: float | None = None
    hard_lower: float | None = None
    hard_upper: float | None = None
    utopian_lower: float | None = None
    utopian_upper: float | None = None
    objective: int | None = None
    name: str = ""

    def __post_init__(self):
        if self.ctype not in CRITERION_TYPES:
            raise FormulationError(f"unknown criterion type {self.ctype!r}")
        if self.ctype in DAV_TYPES:
            if self.volume is None or not (0.0 < self.volume < 1.0):
                raise FormulationError(
                    f"criterion {self.describe()}: dose-at-volume needs volume in (0, 1)")
        elif self.volume is not None:
            raise FormulationError(f"criterion {self.describe()}: volume only applies to d-a-v types")
        if self.is_minimized:
            if self.hard_lower is not None or self.utopian_upper is not None:
                raise FormulationError(
                    f"criterion {self.describe()}: minimized types take hard_upper/utopian_lower only")
            lo = self.utopian_lower if self.utopian_lower is not None else 0.0
            hi = self.hard_upper if self.hard_upper is not None else np.inf
        else:
            if self.hard_upper is not None or self.utopian_lower is not None:
                raise FormulationError(
                    f"criterion {self.describe()}: maximized types take hard_lower/utopian_upper only")
            lo = self.hard_lower if self.hard_lower is not None else 0.0
            hi = self.utopian_upper if self.utopian_upper is not None else np.inf
        if lo > hi:
            raise FormulationError(
                f"criterion {self.describe()}: bound pair infeasible by construction ({lo} > {hi})")

    @property
    def is_minimized(self) -> bool:
        return self.ctype in MINIMIZED_TYPES

    @property
    def sign(self) -> float:
        """Objective sign: +1 for minimized, -1 for maximized criteria."""
        return 1.0 if self.is_minimized else -1.0

    @property
    def is_dav(self) -> bool:
        return self.ctype in DAV_TYPES

    def describe(self) -> str:
        return self.name or f"{self.roi}:{self.ctype}"

    def xi_bounds(self) -> tuple[float, float]:
        if self.is_minimized:
            lo = self.utopian_lower if self.utopian_lower is not None else 0.0
            hi = self.hard_upper if self.hard_upper is not None else np.inf
        else:
            lo = self.hard_lower if self.hard_lower is not None else 0.0
            hi = self.utopian_upper if self.utopian_upper is not None else np.inf
        if lo == hi:  # pinned auxiliary; widen a hair so the box has interior
            hi = lo + 1e-9 * max(1.0, abs(lo))
        return float(lo), float(hi)


class CriterionSet:
    """Validated list of criteria plus the objective slot layout."""

    def __init__(self, criteria):
        self.criteria: tuple[Criterion, ...] = tuple(criteria)
        if not self.criteria:
            raise FormulationError("criterion set is empty")
        names = [c.name for c in self.criteria if c.name]
        if len(names) != len(set(names)):
            raise FormulationError("duplicate criterion names")
        slots = sorted({c.objective for c in self.criteria if c.objective is not None})
        if not slots:
            raise FormulationError("no criterion is in the objective")
        if slots != list(range(len(slots))):
            raise FormulationError(f"objective slots must be contiguous from 0, got {slots}")
        self.num_slots = len(slots)

    @property
    def slot_aims(self) -> tuple[str, ...]:
        """Orientation of each objective slot.

        A slot pairing a minimized with a maximized criterion (a
        homogeneity pair) nets out to a minimized difference, so a slot
        is maximize-oriented only when all its members are maximized.
        """
        aims = []
        for slot in range(self.num_slots):
            members = [c for c in self.criteria if c.objective == slot]
            aims.append("minimize" if any(c.is_minimized for c in members) else "maximize")
        return tuple(aims)

    def __iter__(self):
        return iter(self.criteria)

    def __len__(self):
        return len(self.criteria)

    def validate_against(self, phantom: Phantom) -> None:
        if not any(roi.kind == "target" for roi in phantom.rois):
            raise FormulationError("phantom has no target ROI")
        for c in self.criteria:
            if not phantom.has_roi(c.roi):
                raise FormulationError(f"criterion {c.describe()} references unknown ROI {c.roi!r}")


def normalized_weights(values, num_slots: int) -> np.ndarray:
    """Validate a weight vector: nonnegative, length ``num_slots``, sum 1."""
    w = np.asarray(values, dtype=float)
    if w.shape != (num_slots,):
        raise FormulationError(f"weight vector must have length {num_slots}, got {w.shape}")
    if np.any(w < 0.0) or not np.all(np.isfinite(w)):
        raise FormulationError("weights must be finite and nonnegative")
    total = float(w.sum())
    if total <= 0.0:
        raise FormulationError("weights must not all be zero")
    if abs(total - 1.0) > 1e-9:
        raise FormulationError(f"weights must sum to 1, got {total!r}")
    return w / total


@dataclass(frozen=True)
class CriterionColumns:
    """Column bookkeeping for one criterion inside the LP."""

    xi: int
    alpha: int | None
    eta: slice | None        # columns within the voxelwise block (global indices)
    voxel_rows: slice | None  # this criterion's rows within the voxelwise row block
    voxels: np.ndarray | None


@dataclass
class BlockLP:
    """Expanded weighted-sum LP in the (A11 A12; A21 A22) partition.

    ``matrix() @ x >= rhs()`` with box bounds ``lower <= x <= upper`` and
    objective ``objective_vector . x`` to be minimized.  The first
    ``num_zero_rows`` voxelwise rows stem from max/min-dose criteria
    (zero block of A22); the remaining rows pair one-to-one with the eta
    columns (identity block).
    """

    a11: sp.csr_matrix
    a12: sp.csr_matrix
    a21: sp.csr_matrix
    a22: sp.csr_matrix
    b1: np.ndarray
    b2: np.ndarray
    objective_vector: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    num_zero_rows: int
    machine: MachineModel
    criteria: CriterionSet
    weights: np.ndarray
    columns: tuple[CriterionColumns, ...]
    num_deliverability_rows: int
    row_labels1: tuple[str, ...] = field(repr=False, default=())
    name: str = ""

    # -- dimensions ------------------------------------------------------
    @property
    def n1(self) -> int:
        return self.a11.shape[1]

    @property
    def n2(self) -> int:
        return self.a22.shape[1]

    @property
    def m1(self) -> int:
        return self.a11.shape[0]

    @property
    def m2(self) -> int:
        return self.a21.shape[0]

    @property
    def num_variables(self) -> int:
        return self.n1 + self.n2

    @property
    def num_rows(self) -> int:
        return self.m1 + self.m2

    def matrix(self) -> sp.csr_matrix:
        return sp.bmat([[self.a11, self.a12], [self.a21, self.a22]], format="csr")

    def rhs(self) -> np.ndarray:
        return np.concatenate([self.b1, self.b2])

    # -- solution access --------------------------------------------------
    def extract_trajectories(self, x: np.ndarray) -> Trajectories:
        return Trajectories.from_stacked(x, self.machine)

    def xi_values(self, x: np.ndarray) -> np.ndarray:
        return np.array([x[c.xi] for c in self.columns])

    def alpha_values(self, x: np.ndarray) -> np.ndarray:
        return np.array([x[c.alpha] if c.alpha is not None else np.nan for c in self.columns])

    def objective_coordinates(self, x: np.ndarray) -> np.ndarray:
        """Per-slot objective values in dose space, the analogue of the
        plan quality indices: a homogeneity pair collapses to the
        mean-tail-dose homogeneity difference, a lone maximized slot
        reports its lower-tail bound (+xi) rather than the scalarization
        term (-xi)."""
        coords = np.zeros(self.criteria.num_slots)
        for criterion, cols in zip(self.criteria, self.columns):
            if criterion.objective is not None:
                coords[criterion.objective] += criterion.sign * x[cols.xi]
        for slot, aim in enumerate(self.criteria.slot_aims):
            if aim == "maximize":
                coords[slot] = -coords[slot]
        return coords

    def variable_name(self, col: int) -> str:
        machine = self.machine
        nb = machine.num_bixels
        N, J = machine.leaf_pairs, machine.bixels_per_row
        if col < nb:
            b, rest = divmod(col, N * J)
            n, j = divmod(rest, J)
            return f"l[{b},{n},{j}]"
        if col < 2 * nb:
            b, rest = divmod(col - nb, N * J)
            n, j = divmod(rest, J)
            return f"r[{b},{n},{j}]"
        if col < 2 * nb + machine.num_beams:
            return f"T[{col - 2 * nb}]"
        for k, cols in enumerate(self.columns):
            if col == cols.xi:
                return f"xi[{k}]"
            if cols.alpha is not None and col == cols.alpha:
                return f"alpha[{k}]"
        for k, cols in enumerate(self.columns):
            if cols.eta is not None and cols.eta.start <= col < cols.eta.stop:
                return f"eta[{k},{col - cols.eta.start}]"
        raise IndexError(col)

    def row_name(self, row: int) -> str:
        if row < self.m1:
            return self.row_labels1[row]
        row -= self.m1
        for k, (criterion, cols) in enumerate(zip(self.criteria, self.columns)):
            if cols.voxel_rows is None:
                continue
            if cols.voxel_rows.start <= row < cols.voxel_rows.stop:
                local = row - cols.voxel_rows.start
                label = "dose-cap" if criterion.ctype == "max" else (
                    "dose-floor" if criterion.ctype == "min" else "eta-def")
                return f"{label}[{k},{local}]"
        raise IndexError(row)


def build_weighted_instance(phantom: Phantom, machine: MachineModel, influence: DoseInfluence,
                            criteria: CriterionSet, weights, name: str = "") -> BlockLP:
    """Expand one weighted-sum instance into its block-partitioned LP.

    ``weights`` has one entry per objective slot, lies on the unit
    simplex and scales the signed auxiliary dose variables of the
    in-objective criteria.  The dose vector is substituted out through
    the trajectory-to-dose map, so voxelwise rows reference trajectory
    columns through the dose influence matrix.
    """
    criteria.validate_against(phantom)
    w = normalized_weights(weights, criteria.num_slots)
    if influence.matrix.shape[0] != phantom.num_voxels:
        raise FormulationError("dose influence voxel count does not match phantom")
    if influence.matrix.shape[1] != machine.num_bixels:
        raise FormulationError("dose influence bixel count does not match machine")

    deliv = build_deliverability_constraints(machine)
    n_traj = num_trajectory_variables(machine)
    K = len(criteria)

    # Column layout: [l, r, T | xi_0..xi_{K-1} | alphas] then eta block.
    xi_cols = [n_traj + k for k in range(K)]
    alpha_cols: list[int | None] = []
    next_col = n_traj + K
    for criterion in criteria:
        if criterion.is_dav:
            alpha_cols.append(next_col)
            next_col += 1
        else:
            alpha_cols.append(None)
    n1 = next_col

    eta_slices: list[slice | None] = []
    eta_start = n1
    for criterion in criteria:
        if criterion.is_dav:
            size = phantom.roi(criterion.roi).voxels.size
            eta_slices.append(slice(eta_start, eta_start + size))
            eta_start += size
        else:
            eta_slices.append(None)
    n2 = eta_start - n1

    # Dose substitution: d = rate*(1-tau)*P*(l-r) + rate*tau*(P R)*T.
    rate, tau = machine.dose_rate, machine.transmission
    open_scale = rate * (1.0 - tau)
    leak_scale = rate * tau
    P = influence.matrix
    PR = influence.per_beam_row_sums()
    nb = machine.num_bixels

    def dose_row_entries(voxel: int, sign: float):
        """Triplet entries of ``sign * d_voxel`` over (l, r, T) columns."""
        entries = []
        row = P.getrow(voxel)
        for col, val in zip(row.indices, row.data):
            entries.append((col, sign * open_scale * val))            # l
            entries.append((nb + col, -sign * open_scale * val))      # r
        if leak_scale != 0.0:
            beam_row = PR.getrow(voxel)
            for bcol, val in zip(beam_row.indices, beam_row.data):
                entries.append((2 * nb + bcol, sign * leak_scale * val))  # T
        return entries

    # ---- block row 1: deliverability + aggregation + average rows ------
    deliv_coo = deliv.matrix.tocoo()
    r1_rows = deliv_coo.row.tolist()
    r1_cols = deliv_coo.col.tolist()
    r1_vals = deliv_coo.data.tolist()
    b1 = list(deliv.rhs)
    labels1 = [f"{kind}[{b},{n},{j}]" for kind, b, n, j in deliv.labels]
    a12_rows, a12_cols, a12_vals = [], [], []

    def add_row1(entries_x1, entries_eta, bound, label):
        i = len(b1)
        for col, val in entries_x1:
            r1_rows.append(i)
            r1_cols.append(col)
            r1_vals.append(val)
        for col, val in entries_eta:
            a12_rows.append(i)
            a12_cols.append(col - n1)
            a12_vals.append(val)
        b1.append(bound)
        labels1.append(label)

    for k, criterion in enumerate(criteria):
        roi = phantom.roi(criterion.roi)
        if criterion.ctype == "dav-min":
            inv_v = 1.0 / criterion.volume
            add_row1([(xi_cols[k], 1.0), (alpha_cols[k], -1.0)],
                     [(eta_slices[k].start + i, -inv_v * dw) for i, dw in enumerate(roi.weights)],
                     0.0, f"tail-agg[{k}]")
        elif criterion.ctype == "dav-max":
            inv_v = 1.0 / (1.0 - criterion.volume)
            add_row1([(alpha_cols[k], 1.0), (xi_cols[k], -1.0)],
                     [(eta_slices[k].start + i, -inv_v * dw) for i, dw in enumerate(roi.weights)],
                     0.0, f"tail-agg[{k}]")
        elif criterion.ctype == "avg-min":
            entries = [(xi_cols[k], 1.0)]
            acc: dict[int, float] = {}
            for voxel, dw in zip(roi.voxels, roi.weights):
                for col, val in dose_row_entries(int(voxel), -dw):
                    acc[col] = acc.get(col, 0.0) + val
            entries.extend(acc.items())
            add_row1(entries, [], 0.0, f"avg-cap[{k}]")
        elif criterion.ctype == "avg-max":
            entries = [(xi_cols[k], -1.0)]
            acc = {}
            for voxel, dw in zip(roi.voxels, roi.weights):
                for col, val in dose_row_entries(int(voxel), dw):
                    acc[col] = acc.get(col, 0.0) + val
            entries.extend(acc.items())
            add_row1(entries, [], 0.0, f"avg-floor[{k}]")

    m1 = len(b1)
    a11 = sp.csr_matrix((r1_vals, (r1_rows, r1_cols)), shape=(m1, n1))
    a12 = sp.csr_matrix((a12_vals, (a12_rows, a12_cols)), shape=(m1, n2))

    # ---- block row 2: voxelwise rows ------------------------------------
    # Max/min-dose rows first (the zero block of A22), then eta rows whose
    # ordering matches the eta columns so A22 ends in an exact identity.
    r2_rows, r2_cols, r2_vals = [], [], []
    b2: list[float] = []
    voxel_row_slices: list[slice | None] = [None] * K

    def add_row2(entries_x1, bound):
        i = len(b2)
        for col, val in entries_x1:
            r2_rows.append(i)
            r2_cols.append(col)
            r2_vals.append(val)
        b2.append(bound)

    for k, criterion in enumerate(criteria):
        if criterion.ctype not in ("max", "min"):
            continue
        roi = phantom.roi(criterion.roi)
        start = len(b2)
        if criterion.ctype == "max":
            for voxel in roi.voxels:  # xi_k - d_i >= 0
                add_row2([(xi_cols[k], 1.0)] + dose_row_entries(int(voxel), -1.0), 0.0)
        else:
            for voxel in roi.voxels:  # d_i - xi_k >= 0
                add_row2([(xi_cols[k], -1.0)] + dose_row_entries(int(voxel), 1.0), 0.0)
        voxel_row_slices[k] = slice(start, len(b2))
    num_zero_rows = len(b2)

    for k, criterion in enumerate(criteria):
        if not criterion.is_dav:
            continue
        roi = phantom.roi(criterion.roi)
        start = len(b2)
        sign = -1.0 if criterion.ctype == "dav-min" else 1.0
        # dav-min: eta_i + alpha - d_i >= 0;  dav-max: eta_i - alpha + d_i >= 0
        for voxel in roi.voxels:
            add_row2([(alpha_cols[k], -sign)] + dose_row_entries(int(voxel), sign), 0.0)
        voxel_row_slices[k] = slice(start, len(b2))

    m2 = len(b2)
    a21 = sp.csr_matrix((r2_vals, (r2_rows, r2_cols)), shape=(m2, n1))
    a22 = sp.vstack([sp.csr_matrix((num_zero_rows, n2)), sp.eye(n2, format="csr")],
                    format="csr") if n2 or num_zero_rows else sp.csr_matrix((0, 0))

    # ---- objective and bounds -------------------------------------------
    c = np.zeros(n1 + n2)
    lower = np.zeros(n1 + n2)
    upper = np.full(n1 + n2, np.inf)
    for k, criterion in enumerate(criteria):
        lo, hi = criterion.xi_bounds()
        lower[xi_cols[k]] = lo
        upper[xi_cols[k]] = hi
        if criterion.objective is not None:
            c[xi_cols[k]] = criterion.sign * w[criterion.objective]

    columns = []
    for k, criterion in enumerate(criteria):
        voxelwise = criterion.is_dav or criterion.ctype in ("max", "min")
        columns.append(CriterionColumns(
            xi=xi_cols[k], alpha=alpha_cols[k], eta=eta_slices[k],
            voxel_rows=voxel_row_slices[k],
            voxels=phantom.roi(criterion.roi).voxels if voxelwise else None))
    return BlockLP(a11=a11, a12=a12, a21=a21, a22=a22,
                   b1=np.asarray(b1), b2=np.asarray(b2),
                   objective_vector=c, lower=lower, upper=upper,
                   num_zero_rows=num_zero_rows, machine=machine,
                   criteria=criteria, weights=w, columns=tuple(columns),
                   num_deliverability_rows=deliv.rhs.size,
                   row_labels1=tuple(labels1), name=name)


@dataclass(frozen=True)
class PartitionReport:
    n1: int
    n2: int
    m1: int
    m2_zero: int
    m2_identity: int
    nnz: dict

    def __str__(self):
        return (f"A11 {self.m1}x{self.n1} ({self.nnz['a11']} nnz), "
                f"A12 {self.m1}x{self.n2} ({self.nnz['a12']} nnz), "
                f"A21 {self.m2_zero + self.m2_identity}x{self.n1} ({self.nnz['a21']} nnz), "
                f"A22 = [0({self.m2_zero}); I({self.m2_identity})]")


def partition_report(lp: BlockLP) -> PartitionReport:
    """Certify the A22 = [0 I]^T structure and report block dimensions."""
    a22 = lp.a22.tocsr()
    m2, n2 = a22.shape
    zero_part = a22[:lp.num_zero_rows]
    if zero_part.nnz != 0:
        raise FormulationError("A22 zero block contains nonzeros")
    eye_part = a22[lp.num_zero_rows:]
    if eye_part.shape[0] != n2:
        raise FormulationError("A22 identity block is not square")
    if n2 and (eye_part != sp.eye(n2, format="csr")).nnz != 0:
        raise FormulationError("A22 identity block is not the exact identity")
    return PartitionReport(
        n1=lp.n1, n2=lp.n2, m1=lp.m1,
        m2_zero=lp.num_zero_rows, m2_identity=m2 - lp.num_zero_rows,
        nnz={"a11": lp.a11.nnz, "a12": lp.a12.nnz, "a21": lp.a21.nnz, "a22": lp.a22.nnz},
    )


def scalarized_objective_value(lp: BlockLP, x: np.ndarray) -> float:
    """Weighted signed sum of the auxiliary dose variables, in Gy."""
    return float(np.dot(lp.objective_vector, x))


def dump_lp(lp: BlockLP, path) -> None:
    """Plain-text sparse triplet dump for external cross-checking.

    Format (one record per line, 0-based indices, ``A x >= b``)::

        lp-triplet-v1 <name>
        size <num_rows> <num_vars>
        c <col> <value>
        A <row> <col> <value>
        b <row> <value>
        lb <col> <value>          # only nonzero lower bounds
        ub <col> <value>          # only finite upper bounds
        var <col> <name>
        row <row> <name>
    """
    matrix = lp.matrix().tocoo()
    rhs = lp.rhs()
    with open(path, "w") as fh:
        fh.write(f"lp-triplet-v1 {lp.name or 'instance'}\n")
        fh.write(f"size {lp.num_rows} {lp.num_variables}\n")
        for j in np.flatnonzero(lp.objective_vector):
            fh.write(f"c {j} {float(lp.objective_vector[j])!r}\n")
        for i, j, v in zip(matrix.row, matrix.col, matrix.data):
            fh.write(f"A {i} {j} {float(v)!r}\n")
        for i in np.flatnonzero(rhs):
            fh.write(f"b {i} {float(rhs[i])!r}\n")
        for j in np.flatnonzero(lp.lower):
            fh.write(f"lb {j} {float(lp.lower[j])!r}\n")
        for j in np.flatnonzero(np.isfinite(lp.upper)):
            fh.write(f"ub {j} {float(lp.upper[j])!r}\n")
        for j in range(lp.num_variables):
            fh.write(f"var {j} {lp.variable_name(j)}\n")
        for i in range(lp.num_rows):
            fh.write(f"row {i} {lp.row_name(i)}\n")
