"""Command-line front end.

Subcommands: ``validate``, ``solve``, ``pareto``, ``evaluate``.  Exit
codes: 0 ok, 1 solver failure, 2 configuration error, 3 data error.
Every command is deterministic given the case file, overrides and seed.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import evaluation, ipm, mco, svgplot
from .case import Case, load_case
from .dmlc import (fluence_from_trajectories, read_trajectories_csv, sweep_time_lower_bound,
                   validate_trajectories, write_fluence_csv, write_trajectories_csv)
from .errors import CaseError, DataError, MtdplanError
from .fileio import read_dose_volume, write_dose_volume
from .formulation import build_weighted_instance, dump_lp, partition_report
from .mco import Plan, solve_single_weight
from .phantom import roi_weight_vector

EXIT_OK = 0
EXIT_SOLVER_FAILURE = 1
EXIT_CONFIG_ERROR = 2
EXIT_DATA_ERROR = 3


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mtdplan",
                                     description="Mean-tail-dose DMLC plan optimization")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--case", required=True, help="case file path or demo:<name>")
        p.add_argument("--out", required=needs_out, help="output directory")
        p.add_argument("--tol-gy", type=float, default=None, help="duality-gap tolerance override [Gy]")
        p.add_argument("--seed", type=int, default=0, help="seed recorded for randomized demos")

    p_validate = sub.add_parser("validate", help="check a case file and report diagnostics")
    common(p_validate, needs_out=False)

    p_solve = sub.add_parser("solve", help="solve one weighted-sum instance")
    common(p_solve)
    p_solve.add_argument("--weights", default=None,
                         help="comma-separated objective weights (default: balanced)")
    p_solve.add_argument("--dump-lp", action="store_true",
                         help="also write the expanded LP in sparse triplet text form")

    p_pareto = sub.add_parser("pareto", help="sweep a weight grid and analyze the plan cloud")
    common(p_pareto, needs_out=False)  # defaults to <case>-<timestamp>/
    p_pareto.add_argument("--grid-order", type=int, default=None, help="simplex lattice order")
    p_pareto.add_argument("--workers", type=int, default=None, help="parallel solver processes")

    p_eval = sub.add_parser("evaluate", help="evaluate a stored plan against the case")
    common(p_eval)
    p_eval.add_argument("--plan", required=True,
                        help="trajectories CSV or dose volume binary from a previous run")
    return parser


def _load(args) -> Case:
    case = load_case(args.case)
    if args.tol_gy is not None:
        if args.tol_gy <= 0:
            raise CaseError("tolerance must be positive", path="--tol-gy")
        case.solver.dose_tolerance_gy = args.tol_gy
    return case


def _parse_weights(text: str, num_slots: int) -> np.ndarray:
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError:
        raise CaseError(f"cannot parse weights {text!r}", path="--weights")
    if len(values) != num_slots:
        raise CaseError(f"expected {num_slots} weights, got {len(values)}", path="--weights")
    w = np.asarray(values)
    if np.any(w < 0) or w.sum() <= 0:
        raise CaseError("weights must be nonnegative and not all zero", path="--weights")
    return w / w.sum()


def cmd_validate(args) -> int:
    case = _load(args)
    problems = []
    influence = case.dose_influence()
    report = partition_report(build_weighted_instance(
        case.phantom, case.machine, influence, case.criteria,
        np.full(case.criteria.num_slots, 1.0 / case.criteria.num_slots), name=case.name))
    print(f"case {case.name}: {len(case.phantom.rois)} ROIs, "
          f"{case.phantom.num_voxels} voxels, {case.machine.num_bixels} bixels")
    print(f"block structure: {report}")

    for roi in case.phantom.rois:
        if roi.kind == "target":
            row_doses = influence.matrix[roi.voxels].sum(axis=1)
            dead = int(np.sum(np.asarray(row_doses).ravel() == 0.0))
            if dead:
                problems.append(f"target {roi.name!r} has {dead} voxels receiving no dose")
    if not any(r.kind == "target" for r in case.phantom.rois):
        problems.append("no target ROI defined")

    zero_fluence = np.zeros((case.machine.num_beams, case.machine.leaf_pairs,
                             case.machine.bixels_per_row))
    bound = sweep_time_lower_bound(zero_fluence, case.machine)
    if case.machine.max_time_s < bound:
        print(f"warning: max_time_s {case.machine.max_time_s} s is below the sweep "
              f"lower bound {bound} s")
    else:
        print(f"sweep-time lower bound {bound} s within budget {case.machine.max_time_s} s")

    if problems:
        for p in problems:
            print(f"error: {p}")
        return EXIT_DATA_ERROR
    print("case ok")
    return EXIT_OK


def _write_plan_artifacts(case: Case, plan: Plan, out: str, tag: str = "plan") -> None:
    os.makedirs(out, exist_ok=True)
    write_trajectories_csv(os.path.join(out, f"{tag}_trajectories.csv"), plan.trajectories)
    for b in range(case.machine.num_beams):
        write_fluence_csv(os.path.join(out, f"{tag}_fluence_beam{b}.csv"), plan.fluence, b)
    write_dose_volume(os.path.join(out, f"{tag}_dose.bin"), plan.dose, case.phantom.grid_dims)
    _write_quality_report(case, plan.dose, plan, out, tag)


def _write_quality_report(case: Case, dose: np.ndarray, plan: Plan | None, out: str, tag: str) -> None:
    quality, violations = evaluation.evaluate_plan(case.phantom, dose,
                                                   case.quality_indices, case.criteria)
    grid = evaluation.default_dose_grid(dose)
    curves = {}
    for spec in case.quality_indices:
        if spec.roi not in curves:
            curves[spec.roi] = evaluation.dvh_curve(dose, roi_weight_vector(case.phantom, spec.roi), grid)
    evaluation.write_dvh_csv(os.path.join(out, f"{tag}_dvh.csv"), grid, curves)
    evaluation.write_violation_csv(os.path.join(out, f"{tag}_violations.csv"), violations)
    with open(os.path.join(out, f"{tag}_quality.txt"), "w") as fh:
        fh.write(f"case: {case.name}\n")
        if plan is not None:
            fh.write(f"status: {plan.status}\n")
            fh.write(f"iterations: {plan.iterations}\n")
            fh.write(f"duality gap [Gy]: {plan.gap_gy!r}\n")
            fh.write(f"weights: {','.join(repr(float(v)) for v in plan.weights)}\n")
            fh.write("xi [Gy]: " + ",".join(repr(float(v)) for v in plan.xi) + "\n")
            fh.write("objective coordinates [Gy]: "
                     + ",".join(repr(float(v)) for v in plan.objective_coordinates) + "\n")
        for spec, value in zip(case.quality_indices, quality):
            fh.write(f"quality {spec.name} [{spec.aim}]: {float(value)!r}\n")
        over = [v for v in violations if v.over_1pct]
        fh.write(f"hard bounds violated over 1%: {len(over)}\n")


def cmd_solve(args) -> int:
    case = _load(args)
    num_slots = case.criteria.num_slots
    weights = (_parse_weights(args.weights, num_slots) if args.weights
               else np.full(num_slots, 1.0 / num_slots))
    plan = solve_single_weight(case, weights)
    os.makedirs(args.out, exist_ok=True)
    _write_plan_artifacts(case, plan, args.out)
    ipm.write_iteration_log(os.path.join(args.out, "plan_solver_log.csv"), plan.solver_history)
    if args.dump_lp:
        lp = build_weighted_instance(case.phantom, case.machine, case.dose_influence(),
                                     case.criteria, weights, name=case.name)
        dump_lp(lp, os.path.join(args.out, "instance.lp"))
    print(f"status: {plan.status}; objective {plan.objective_value!r} Gy; "
          f"gap {plan.gap_gy!r} Gy; {plan.iterations} iterations")
    if not plan.feasible:
        return EXIT_SOLVER_FAILURE
    return EXIT_OK


def cmd_pareto(args) -> int:
    case = _load(args)
    grid_order = args.grid_order if args.grid_order is not None else case.grid_order
    workers = args.workers if args.workers is not None else case.workers
    out = args.out or f"{case.name}-{time.strftime('%Y%m%d-%H%M%S')}"
    os.makedirs(out, exist_ok=True)

    grid = mco.weight_grid(case.criteria.num_slots, grid_order)
    pareto = mco.generate_pareto_set(case, grid, settings=case.solver_settings(),
                                     workers=workers)
    mco.write_pareto_csv(os.path.join(out, "pareto.csv"), pareto,
                         case.criteria, case.quality_indices)

    converged = pareto.converged()
    if converged:
        quality = pareto.quality_matrix()
        objective = pareto.objective_matrix()
        report = mco.hull_and_shift_report(quality, objective)
        mco.write_shift_report_csv(os.path.join(out, "hull_shift_report.csv"),
                                   report, case.quality_indices)
        if quality.shape[1] == 3:
            filled = np.array([not any(v.over_1pct for v in e.plan.violations)
                               for e in converged])
            svgplot.scatter3d_two_views(os.path.join(out, "pareto_scatter.svg"), quality,
                                        [spec.name for spec in case.quality_indices],
                                        case.index_aims(), filled=filled)
        _write_dvh_band_svg(case, pareto, out)

    for entry in pareto.entries:
        if entry.plan is not None:
            _write_plan_artifacts(case, entry.plan, os.path.join(out, f"plan_{entry.index:03d}"))

    n_conv = len(converged)
    print(f"pareto sweep: {n_conv}/{len(pareto.entries)} plans converged; artifacts in {out}")
    if n_conv == 0:
        return EXIT_SOLVER_FAILURE
    return EXIT_OK


def _write_dvh_band_svg(case: Case, pareto: mco.ParetoSet, out: str) -> None:
    converged = pareto.converged()
    if not converged:
        return
    top = max(float(e.plan.dose.max()) for e in converged)
    grid = np.arange(max(int(np.ceil(top / 0.1)) + 2, 2)) * 0.1
    bands = {}
    highlight = {}
    balanced_entry = next((e for e in converged if e.index == pareto.balanced_index), converged[0])
    for spec in case.quality_indices:
        if spec.roi in bands:
            continue
        w = roi_weight_vector(case.phantom, spec.roi)
        curves = np.array([evaluation.dvh_curve(e.plan.dose, w, grid) for e in converged])
        bands[spec.roi] = curves
        highlight[spec.roi] = evaluation.dvh_curve(balanced_entry.plan.dose, w, grid)
    svgplot.dvh_bands(os.path.join(out, "dvh_bands.svg"), grid, bands, highlight)


def cmd_evaluate(args) -> int:
    case = _load(args)
    plan_path = args.plan
    if plan_path.endswith(".csv"):
        traj = read_trajectories_csv(plan_path, case.machine)
        violations = validate_trajectories(traj, case.machine)
        if violations:
            print(f"warning: stored trajectories violate {len(violations)} deliverability rows")
        fluence = fluence_from_trajectories(traj, case.machine)
        dose = case.dose_influence().matrix @ fluence.ravel()
    else:
        dose, dims = read_dose_volume(plan_path)
        if tuple(dims) != tuple(case.phantom.grid_dims):
            raise DataError(f"dose grid {dims} does not match case grid {case.phantom.grid_dims}")
    os.makedirs(args.out, exist_ok=True)
    _write_quality_report(case, dose, None, args.out, tag="evaluated")
    quality, _ = evaluation.evaluate_plan(case.phantom, dose, case.quality_indices, case.criteria)
    for spec, value in zip(case.quality_indices, quality):
        print(f"{spec.name}: {float(value)!r} Gy")
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "validate":
            return cmd_validate(args)
        if args.command == "solve":
            return cmd_solve(args)
        if args.command == "pareto":
            return cmd_pareto(args)
        if args.command == "evaluate":
            return cmd_evaluate(args)
        raise AssertionError(args.command)
    except CaseError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA_ERROR
    except MtdplanError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA_ERROR


def entry_point() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    raise SystemExit(main())
