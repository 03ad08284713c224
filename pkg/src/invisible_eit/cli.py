"""Command line interface: ``invisible-eit <subcommand> --config FILE``.

Subcommands
-----------
generate       run the fixed-point construction and export fields and logs
verify-pem     recompute the point-electrode measurements of the exported field
validate-cem   complete electrode model discrepancy of the exported field
mesh-info      mesh statistics for a configuration

Exit codes: 0 success, 1 verification failed, 2 configuration or input
error, 3 numerical failure, 4 divergence (including non-convergence).
"""

import argparse
import csv
import io
import json
import logging
import os
import sys
import zipfile

import numpy as np

from .basis import build_dual_basis, kappa_eval, project_kappa0
from .cem import CemElectrodes, e_cem, trig_current_basis
from .config import load_config
from .errors import (InvisibleEITError, MaxBackoffsExceeded, MissingArtifact, ParseError,
                     ValidationError)
from .mesh import DEFAULT_DEGREE, build_disk_mesh
from .solver import measurement_matrix_from_sigma, run_algorithm
from .vtk import write_vtk

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_DIVERGED = 4

SIGMA_FILE = "sigma_quad.npz"

#: Keys present in summary.json whatever the outcome.
SUMMARY_KEYS = ("converged", "status", "error", "iterations", "epsilon_requested", "epsilon_used",
                "backoff_triggered", "backoffs", "backoff_reasons", "final_discrepancy",
                "tau_max", "measurement_max", "naive_measurement_max", "min_sigma",
                "electrodes_deg", "seed", "n_elements", "omega_shape")


class _Console:
    def __init__(self, quiet):
        self.quiet = quiet

    def __call__(self, *lines):
        if not self.quiet:
            for line in lines:
                print(line)


def build_setup(cfg):
    """Mesh and basis (with projected seed) for a configuration."""
    ecfg = cfg.electrode_config()
    widths = None
    if cfg.cem is not None:
        widths = [cfg.cem.width, 0.5 * cfg.cem.width]
    mesh = build_disk_mesh(cfg.omega, cfg.target_h, ecfg.angles, cem_widths=widths)
    basis = build_dual_basis(mesh, ecfg, cfg.quadrature_degree)
    basis = project_kappa0(basis, cfg.seed)
    return mesh, basis


def _fmt(x):
    return "nan" if not np.isfinite(x) else f"{x:.17g}"


def raster_csv(field, n):
    """Uniform ``n x n`` grid over [-1, 1]^2 with NaN outside the unit disk."""
    t = np.linspace(-1.0, 1.0, n)
    X, Y = np.meshgrid(t, t)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    vals = np.full(len(pts), np.nan)
    inside = np.hypot(pts[:, 0], pts[:, 1]) < 1.0
    vals[inside] = field(pts[inside])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "y", "sigma"])
    for (x, y), v in zip(pts, vals):
        w.writerow([_fmt(x), _fmt(y), _fmt(v)])
    return buf.getvalue()


def save_arrays(path, **arrays):
    """``.npz`` archive with fixed timestamps so reruns are byte-identical."""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arrays[name]), allow_pickle=False)
            zf.writestr(info, buf.getvalue())


def load_sigma_artifact(out_dir, mesh, degree):
    path = os.path.join(out_dir, SIGMA_FILE)
    if not os.path.exists(path):
        raise MissingArtifact(f"{path} not found; run 'generate' first", path=path)
    with np.load(path) as data:
        art = {k: data[k] for k in data.files}
    if art["sigma"].shape != mesh.quad_table(degree).weights.shape or int(art["degree"]) != degree:
        raise MissingArtifact(f"{path} was produced for a different mesh", path=path)
    return art


def _blank_summary(cfg):
    s = dict.fromkeys(SUMMARY_KEYS)
    s.update(converged=False, electrodes_deg=list(cfg.electrode_angles_deg), seed=cfg.seed,
             epsilon_requested=cfg.epsilon, omega_shape=cfg.omega.shape,
             backoff_triggered=False, backoffs=0, backoff_reasons=[])
    return s


def _write(path, text):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def cmd_generate(cfg, say):
    """Run the construction and export fields, history and summary."""
    os.makedirs(cfg.output_dir, exist_ok=True)
    summary = _blank_summary(cfg)
    code = EXIT_OK
    report = None
    try:
        mesh, basis = build_setup(cfg)
        summary["n_elements"] = int(mesh.n_elements)
        try:
            field, report = run_algorithm(mesh, basis, cfg.run_config())
        except MaxBackoffsExceeded as err:
            report, field = err.report, None
            summary["error"] = err.code
            code = EXIT_DIVERGED
        summary.update(report.summary())
        if summary["error"] is None and not report.converged:
            summary["error"] = report.status
            code = EXIT_DIVERGED
        _write(os.path.join(cfg.output_dir, "convergence.csv"), report.to_csv())
        if field is not None:
            _export_fields(cfg, mesh, basis, field)
    except InvisibleEITError as err:
        summary["error"] = err.code
        summary["status"] = err.code
        code = EXIT_NUMERICAL
        _write(os.path.join(cfg.output_dir, "convergence.csv"),
               report.to_csv() if report else "attempt,iteration,epsilon,discrepancy,tau_max,min_sigma\n")
        print(f"{err.code}: {err}", file=sys.stderr)
    _write(os.path.join(cfg.output_dir, "summary.json"),
           json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if report is not None:
        say(f"status: {summary['status']}",
            f"iterations: {summary['iterations']}",
            f"epsilon used: {summary['epsilon_used']:g} (requested {cfg.epsilon:g})",
            f"final discrepancy: {summary['final_discrepancy']}",
            f"max |M|: {summary['measurement_max']}",
            f"max |M| for the seed alone: {summary['naive_measurement_max']}",
            f"min sigma: {summary['min_sigma']}")
    return code


def _export_fields(cfg, mesh, basis, field):
    c = mesh.centroids()
    kappa_c = np.where(mesh.inside, field.kappa(c), 0.0)
    kappa0_c = np.where(mesh.inside, basis.kappa0_at(c), 0.0)
    sigma_c = 1.0 + field.epsilon * kappa_c
    out = cfg.output_dir
    write_vtk(os.path.join(out, "sigma_eps.vtk"), mesh, {"sigma": sigma_c})
    write_vtk(os.path.join(out, "kappa.vtk"), mesh, {"kappa": kappa_c, "kappa0": kappa0_c})
    _write(os.path.join(out, "sigma_raster.csv"), raster_csv(field, cfg.raster))
    save_arrays(os.path.join(out, SIGMA_FILE), sigma=field.table(mesh), tau=field.tau,
                epsilon=np.float64(field.epsilon), degree=np.int64(cfg.quadrature_degree))


def verify_measurements(mesh, basis, sigma, epsilon, stop_tol, degree=DEFAULT_DEGREE):
    """Measurement matrix of ``sigma`` against the seed-only perturbation.

    Returns a dict with ``measurement_max``, ``naive_measurement_max``,
    their ``ratio``, the ``threshold`` ``epsilon * stop_tol * 10`` and
    ``passed``.
    """
    m = measurement_matrix_from_sigma(mesh, sigma, basis.potentials, degree)
    naive = 1.0 + epsilon * kappa_eval(basis, np.zeros((basis.N, basis.N)), mesh=mesh)
    mn = measurement_matrix_from_sigma(mesh, naive, basis.potentials, degree)
    mmax, nmax = float(np.abs(m).max()), float(np.abs(mn).max())
    threshold = epsilon * stop_tol * 10.0
    return {"measurement_max": mmax, "naive_measurement_max": nmax,
            "ratio": mmax / nmax if nmax > 0 else float("nan"),
            "threshold": threshold, "passed": bool(mmax <= threshold), "matrix": m}


def cmd_verify_pem(cfg, say):
    """Recompute point-electrode measurements of the exported field."""
    mesh, basis = build_setup(cfg)
    art = load_sigma_artifact(cfg.output_dir, mesh, cfg.quadrature_degree)
    res = verify_measurements(mesh, basis, art["sigma"], float(art["epsilon"]), cfg.stop_tol,
                              cfg.quadrature_degree)
    say(f"max |M|: {res['measurement_max']:.6e}",
        f"max |M| for the seed alone: {res['naive_measurement_max']:.6e}",
        f"ratio: {res['ratio']:.6e}",
        f"threshold: {res['threshold']:.6e}",
        "PASS" if res["passed"] else "FAIL")
    return EXIT_OK if res["passed"] else EXIT_FAIL


def cmd_validate_cem(cfg, say):
    """Electrode-model discrepancy of the exported field."""
    if cfg.cem is None:
        raise ValidationError("configuration has no [cem] section", field="cem")
    mesh, _ = build_setup(cfg)
    art = load_sigma_artifact(cfg.output_dir, mesh, cfg.quadrature_degree)
    electrodes = CemElectrodes(cfg.electrode_config().angles, cfg.cem.width, cfg.cem.impedance)
    currents = trig_current_basis(electrodes.centers)
    e, per, U1, U0 = e_cem(mesh, art["sigma"], electrodes, currents, return_parts=True)
    e_half = e_cem(mesh, art["sigma"], electrodes.with_width(0.5 * cfg.cem.width), currents)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    L = electrodes.L
    w.writerow(["pattern", "conductivity"] + [f"U{l}" for l in range(L)])
    for j in range(len(currents)):
        w.writerow([j + 1, "perturbed"] + [f"{v:.17e}" for v in U1[j]])
        w.writerow([j + 1, "reference"] + [f"{v:.17e}" for v in U0[j]])
    _write(os.path.join(cfg.output_dir, "cem_voltages.csv"), buf.getvalue())
    report = {"e_cem": e, "e_cem_half_width": e_half, "per_current": per.tolist(),
              "width": cfg.cem.width, "impedance": cfg.cem.impedance}
    _write(os.path.join(cfg.output_dir, "cem_report.json"),
           json.dumps(report, indent=2, sort_keys=True) + "\n")
    say(f"E_CEM: {e:.6e}", f"E_CEM at half width: {e_half:.6e}",
        *(f"pattern {j + 1}: {v:.6e}" for j, v in enumerate(per)))
    return EXIT_OK


def cmd_mesh_info(cfg, say):
    """Print mesh statistics."""
    ecfg = cfg.electrode_config()
    widths = [cfg.cem.width, 0.5 * cfg.cem.width] if cfg.cem is not None else None
    mesh = build_disk_mesh(cfg.omega, cfg.target_h, ecfg.angles, cem_widths=widths)
    qt = mesh.quad_table(cfg.quadrature_degree)
    area_in = float(qt.weights[mesh.inside].sum())
    say(f"elements: {mesh.n_elements}",
        f"nodes: {mesh.n_nodes}",
        f"vertices: {mesh.n_vertices}",
        f"boundary edges: {len(mesh.boundary_edges)}",
        f"h_max: {mesh.h_max:.6f}",
        f"omega elements: {int(mesh.inside.sum())}",
        f"omega area: {area_in:.12f} (exact {cfg.omega.area:.12f})",
        f"disk area: {float(qt.weights.sum()):.12f} (exact {np.pi:.12f})")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "verify-pem": cmd_verify_pem,
            "validate-cem": cmd_validate_cem, "mesh-info": cmd_mesh_info}


def build_parser():
    p = argparse.ArgumentParser(prog="invisible-eit",
                                description="Perturbations of the unit conductivity that leave "
                                            "point-electrode measurements unchanged.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sp = sub.add_parser(name, help=(fn.__doc__ or "").strip() or None)
        sp.add_argument("--config", required=True, help="experiment configuration file")
        sp.add_argument("--out", help="output directory (overrides [output] dir)")
        sp.add_argument("--seed-expr", help="seed expression in x and y")
        sp.add_argument("--epsilon", type=float, help="perturbation size")
        sp.add_argument("--electrodes", type=int, help="electrode count (equispaced rule)")
        sp.add_argument("--quiet", action="store_true", help="print nothing but errors")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config).with_overrides(
            epsilon=args.epsilon, electrodes=args.electrodes, seed=args.seed_expr,
            output_dir=args.out)
    except (ParseError, ValidationError) as err:
        print(f"{err.code}: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as err:
        print(f"CONFIG_NOT_FOUND: {err}", file=sys.stderr)
        return EXIT_CONFIG
    say = _Console(args.quiet)
    try:
        return COMMANDS[args.command](cfg, say)
    except (ValidationError, MissingArtifact) as err:
        print(f"{err.code}: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except InvisibleEITError as err:
        print(f"{err.code}: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
