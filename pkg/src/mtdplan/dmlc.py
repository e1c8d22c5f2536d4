"""Sliding-window leaf trajectories and their linear deliverability model.

Trajectories are represented by the departure times of the trailing
(left) and leading (right) leaf at each bixel, plus a beam-on time per
beam.  With a constant bixel traverse time the feasible set is a
polyhedron and the bixel exposure (hence dose) is linear in the times,
which is what the downstream linear program exploits.

Row blocks emitted by :func:`build_deliverability_constraints`, all in
``row . x >= rhs`` orientation over the variable vector
``x = [l (B*N*J), r (B*N*J), T (B)]`` (C order, beam major):

  per (beam b, leaf pair n):
    "r-order" j=0..J-2 :  r[b,n,j+1] - r[b,n,j]  >=  dt
    "l-order" j=0..J-2 :  l[b,n,j+1] - l[b,n,j]  >=  dt
    "min-gap" j=0..J-2 :  l[b,n,j] - r[b,n,j+1]  >=  -(1-rho)*dt
    "first-gap"        :  l[b,n,0] - r[b,n,0]    >=  rho*dt
    "beam-on"          :  T[b] - l[b,n,J-1]      >=  dt
  per (b, n):
    "park"             :  r[b,n,0]               >=  0
  once:
    "total-time"       :  -sum_b T[b]            >=  -T_max

Total row count: B*N*(3*(J-1)+2) + B*N + 1.  The trailing-leaf-behind-
leading-leaf condition r <= l is implied by "min-gap"/"first-gap"
together with "l-order" and is therefore not emitted.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import DataError
from .phantom import DoseInfluence, MachineModel


@dataclass(frozen=True)
class Trajectories:
    """Leaf departure times (seconds); shapes (B, N, J), (B, N, J), (B,)."""

    l: np.ndarray
    r: np.ndarray
    T: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "l", np.asarray(self.l, dtype=float))
        object.__setattr__(self, "r", np.asarray(self.r, dtype=float))
        object.__setattr__(self, "T", np.asarray(self.T, dtype=float))
        if self.l.shape != self.r.shape or self.l.ndim != 3:
            raise ValueError("l and r must both have shape (B, N, J)")
        if self.T.shape != (self.l.shape[0],):
            raise ValueError("T must have one entry per beam")

    def stacked(self) -> np.ndarray:
        """Variable vector [l, r, T] in the constraint-block ordering."""
        return np.concatenate([self.l.ravel(), self.r.ravel(), self.T])

    @staticmethod
    def from_stacked(x: np.ndarray, machine: MachineModel) -> "Trajectories":
        B, N, J = machine.num_beams, machine.leaf_pairs, machine.bixels_per_row
        nb = B * N * J
        return Trajectories(l=x[:nb].reshape(B, N, J),
                            r=x[nb:2 * nb].reshape(B, N, J),
                            T=x[2 * nb:2 * nb + B].copy())


@dataclass(frozen=True)
class ConstraintBlock:
    """Sparse system ``matrix @ x >= rhs`` with per-row labels."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    labels: tuple[tuple, ...]  # (kind, b, n, j) with j = -1 where not applicable


@dataclass(frozen=True)
class TrajectoryViolation:
    kind: str
    beam: int
    leaf_pair: int
    bixel: int
    amount_s: float


def num_trajectory_variables(machine: MachineModel) -> int:
    return 2 * machine.num_bixels + machine.num_beams


def build_deliverability_constraints(machine: MachineModel) -> ConstraintBlock:
    """Assemble the deliverability rows documented in the module header."""
    B, N, J = machine.num_beams, machine.leaf_pairs, machine.bixels_per_row
    dt = machine.traverse_time_s
    rho = machine.min_gap_fraction
    nb = B * N * J
    n_vars = num_trajectory_variables(machine)

    def l_col(b, n, j):
        return (b * N + n) * J + j

    def r_col(b, n, j):
        return nb + (b * N + n) * J + j

    def t_col(b):
        return 2 * nb + b

    rows, cols, vals, rhs, labels = [], [], [], [], []

    def add_row(entries, bound, label):
        i = len(rhs)
        for col, val in entries:
            rows.append(i)
            cols.append(col)
            vals.append(val)
        rhs.append(bound)
        labels.append(label)

    for b in range(B):
        for n in range(N):
            for j in range(J - 1):
                add_row([(r_col(b, n, j + 1), 1.0), (r_col(b, n, j), -1.0)], dt,
                        ("r-order", b, n, j))
            for j in range(J - 1):
                add_row([(l_col(b, n, j + 1), 1.0), (l_col(b, n, j), -1.0)], dt,
                        ("l-order", b, n, j))
            for j in range(J - 1):
                add_row([(l_col(b, n, j), 1.0), (r_col(b, n, j + 1), -1.0)],
                        -(1.0 - rho) * dt, ("min-gap", b, n, j))
            add_row([(l_col(b, n, 0), 1.0), (r_col(b, n, 0), -1.0)], rho * dt,
                    ("first-gap", b, n, 0))
            add_row([(t_col(b), 1.0), (l_col(b, n, J - 1), -1.0)], dt,
                    ("beam-on", b, n, J - 1))
    for b in range(B):
        for n in range(N):
            add_row([(r_col(b, n, 0), 1.0)], 0.0, ("park", b, n, 0))
    add_row([(t_col(b), -1.0) for b in range(B)], -machine.max_time_s,
            ("total-time", -1, -1, -1))

    matrix = sp.csr_matrix((vals, (rows, cols)), shape=(len(rhs), n_vars))
    return ConstraintBlock(matrix=matrix, rhs=np.asarray(rhs), labels=tuple(labels))


def validate_trajectories(traj: Trajectories, machine: MachineModel, tol: float = 1e-9):
    """Report every deliverability row violated by more than ``tol`` seconds."""
    block = build_deliverability_constraints(machine)
    slack = block.matrix @ traj.stacked() - block.rhs
    out = []
    for i in np.flatnonzero(slack < -tol):
        kind, b, n, j = block.labels[i]
        out.append(TrajectoryViolation(kind=kind, beam=b, leaf_pair=n, bixel=j,
                                       amount_s=float(-slack[i])))
    return out


def fluence_from_trajectories(traj: Trajectories, machine: MachineModel,
                              validate: bool = False) -> np.ndarray:
    """Beamlet weights, shape (B, N, J).

    Each bixel's weight is the dose rate times its open exposure
    ``l - r`` plus leakage through closed leaves for the rest of the
    beam-on time: ``rate * (l - r + tau * (T - (l - r)))``.
    """
    if validate:
        violations = validate_trajectories(traj, machine)
        if violations:
            raise ValueError(f"infeasible trajectories: {violations[:3]}"
                             + (" ..." if len(violations) > 3 else ""))
    gap = traj.l - traj.r
    return machine.dose_rate * (gap + machine.transmission * (traj.T[:, None, None] - gap))


def dose_from_trajectories(influence: DoseInfluence, traj: Trajectories,
                           machine: MachineModel) -> np.ndarray:
    """Voxel dose vector for a trajectory set: influence times fluence."""
    if influence.matrix.shape[1] != machine.num_bixels:
        raise ValueError("dose influence and machine bixel counts disagree")
    weights = fluence_from_trajectories(traj, machine)
    return influence.matrix @ weights.ravel()


def sweep_time_lower_bound(fluence: np.ndarray, machine: MachineModel) -> float:
    """Lower bound (seconds) on total delivery time for a fluence map.

    Per beam: every leaf pair must traverse all J bixels (``J * dt``) and
    in a single left-to-right sweep the open time spent on a row is at
    least the sum of positive fluence increments along it divided by the
    effective open dose rate ``rate * (1 - tau)``.  The bound is the sum
    over beams of the worst row.
    """
    weights = np.asarray(fluence, dtype=float)
    B, N, J = machine.num_beams, machine.leaf_pairs, machine.bixels_per_row
    if weights.shape != (B, N, J):
        raise ValueError(f"fluence shape {weights.shape} does not match machine {(B, N, J)}")
    if np.any(weights < 0):
        raise ValueError("fluence must be nonnegative")
    increments = np.diff(np.concatenate([np.zeros((B, N, 1)), weights], axis=2), axis=2)
    row_open = np.sum(np.maximum(increments, 0.0), axis=2) / (machine.dose_rate * (1.0 - machine.transmission))
    return float(np.sum(J * machine.traverse_time_s + np.max(row_open, axis=1)))


def write_trajectories_csv(path, traj: Trajectories) -> None:
    """Columns (beam, leaf_pair, bixel, l_time_s, r_time_s) plus T rows."""
    B, N, J = traj.l.shape
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["record", "beam", "leaf_pair", "bixel", "l_time_s", "r_time_s"])
        for b in range(B):
            for n in range(N):
                for j in range(J):
                    writer.writerow(["bixel", b, n, j, repr(float(traj.l[b, n, j])),
                                     repr(float(traj.r[b, n, j]))])
        for b in range(B):
            writer.writerow(["beam_on", b, "", "", repr(float(traj.T[b])), ""])


def read_trajectories_csv(path, machine: MachineModel) -> Trajectories:
    B, N, J = machine.num_beams, machine.leaf_pairs, machine.bixels_per_row
    l = np.full((B, N, J), np.nan)
    r = np.full((B, N, J), np.nan)
    T = np.full(B, np.nan)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("empty trajectory file", line=1)
        if header[:1] != ["record"]:
            raise DataError("missing trajectory header", line=1)
        for lineno, row in enumerate(reader, start=2):
            try:
                if row[0] == "bixel":
                    b, n, j = int(row[1]), int(row[2]), int(row[3])
                    l[b, n, j] = float(row[4])
                    r[b, n, j] = float(row[5])
                elif row[0] == "beam_on":
                    T[int(row[1])] = float(row[4])
                else:
                    raise ValueError(f"unknown record {row[0]!r}")
            except (ValueError, IndexError) as exc:
                raise DataError(str(exc), line=lineno)
    if np.any(np.isnan(l)) or np.any(np.isnan(r)) or np.any(np.isnan(T)):
        raise DataError("trajectory file does not cover every bixel/beam")
    return Trajectories(l=l, r=r, T=T)


def write_fluence_csv(path, fluence: np.ndarray, beam: int) -> None:
    """One beam's fluence as an N x J grid, leaf pairs as rows."""
    weights = np.asarray(fluence, dtype=float)[beam]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"bixel_{j}" for j in range(weights.shape[1])])
        for row in weights:
            writer.writerow([repr(float(x)) for x in row])
