"""Command-line front end for chainsolve."""

import argparse
import logging
import sys
import threading
from pathlib import Path

import scipy.fft

from chainsolve import storage
from chainsolve.calibration import calibrated_table, get_calibration_tracker
from chainsolve.config import LOG_LEVEL, OUT_DIR, THREADS, RunConfig, load_config
from chainsolve.fields import PotentialSpec
from chainsolve.kernel import table_oracle_spread
from chainsolve.poisson import newtonian_bump, newtonian_limit_experiment
from chainsolve.resilience import ChainsolveError, ConfigError
from chainsolve.solver import ell_scan, ground_state, planar_ground_state
from chainsolve.verify import CRITERIA, run_verify

logger = logging.getLogger("chainsolve")

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _kernel_options(config: RunConfig) -> dict:
    k = config.kernel
    return {
        "calibration_width": k.calibration_width,
        "validation_width": k.validation_width,
        "tol": k.quad_tol,
        "memory_limit_mb": k.memory_limit_mb,
    }


def _table(config: RunConfig):
    return calibrated_table(config.grid, config.kernel.near_field_cells, **_kernel_options(config))


def cmd_kernel(args) -> int:
    config = load_config(args.config)
    out = Path(args.out)
    table = _table(config)
    meta = table.metadata()
    record = get_calibration_tracker().lookup(config.grid, config.kernel.near_field_cells, config.kernel.calibration_width)
    spread = table_oracle_spread(table, config.kernel.n_images)

    storage.save_kernel_table(table, out / "kernel.chnk")
    storage.save_json(
        {
            "metadata": meta.model_dump(mode="json"),
            "calibration": record.model_dump(mode="json") if record else None,
            "image_sum_spread": spread,
        },
        out / "kernel.json",
    )
    print(f"calibration constant  {meta.calibration_constant:.12e}")
    print(f"crossover radius R    {meta.crossover_radius:.6g}")
    print(f"log constant C_K      {meta.log_constant:.6g}")
    print(f"asymptotic slope      {meta.asymptotic_slope:.6g}")
    print(f"image-sum spread      {spread:.3e}")
    return EXIT_OK


def cmd_solve(args) -> int:
    config = load_config(args.config)
    out = Path(args.out)
    a = PotentialSpec.from_section(config.potential)
    try:
        if args.plane:
            report = planar_ground_state(config.solver, a, config.grid, config.kernel.near_field_cells)
            field = report.field.extend()
        else:
            report = ground_state(config.solver, a, _table(config))
            field = report.field
    except ChainsolveError as e:
        storage.save_json({"error": type(e).__name__, "message": str(e)}, out / "error.json")
        raise

    storage.save_json(report, out / "report.json")
    storage.write_trace_csv(report.trace, out / "trace.csv")
    storage.save_field(field, out / "field.chnf")
    storage.export_slice(field, out / "slice_x3.csv", axis=2)
    storage.export_slice(field, out / "slice_x1.csv", axis=0)
    e = report.energy
    print(f"{report.symmetry}: phi={e.phi:.12e} grad={report.grad_norm:.3e} nehari={report.nehari_residual:.3e} pde={report.pde_residual:.3e}")
    return EXIT_OK


def cmd_ellscan(args) -> int:
    config = load_config(args.config)
    out = Path(args.out)
    a = PotentialSpec.from_section(config.potential)
    scan_path = out / "scan.csv"
    completed = storage.read_scan_csv(scan_path) if args.resume else []
    if not args.resume and scan_path.exists():
        scan_path.unlink()

    lock = threading.Lock()

    def on_row(row):
        with lock:
            storage.append_scan_row(row, scan_path)

    result = ell_scan(
        config.scan.ell_values,
        config.solver,
        a,
        config.grid,
        config.kernel.near_field_cells,
        margin=config.scan.margin,
        kernel_options=_kernel_options(config),
        max_workers=args.threads,
        completed=completed,
        on_row=on_row,
    )
    storage.write_scan_csv(result.rows, scan_path)
    storage.save_json(result, out / "scan.json")

    n = config.newtonian
    phi = newtonian_bump(n.support_radius, n.cells_per_radius)
    rows = newtonian_limit_experiment(phi, [m * n.support_radius for m in n.ell_multiples], config.kernel.near_field_cells)
    storage.write_newtonian_csv(rows, out / "newtonian.csv")

    print(f"kappa={result.kappa:.12e}")
    print(f"ell*={result.ell_star}" + (f" (bound {result.ell_bound:.4g})" if result.ell_bound else ""))
    return EXIT_OK


def cmd_verify(args) -> int:
    only = args.only.split(",") if args.only else None
    if only and any(i not in CRITERIA for i in only):
        raise ConfigError("--only", f"unknown criterion in {args.only}; known: {', '.join(CRITERIA)}")
    summary = run_verify(only)
    storage.save_json(summary, Path(args.out) / "verify.json")
    for c in summary.criteria:
        print(f"{c.id:4s} {'PASS' if c.passed else 'FAIL'}  {c.title}  {c.measured}")
    return EXIT_OK if summary.passed else EXIT_VERIFY_FAILED


def cmd_export_slice(args) -> int:
    if not args.field:
        raise ConfigError("--field", "export-slice needs a field dump")
    field = storage.load_field(args.field)
    path = storage.export_slice(field, Path(args.out) / "slice.csv", axis=args.axis, index=args.index)
    print(f"wrote {path}")
    return EXIT_OK


COMMANDS = {
    "kernel": cmd_kernel,
    "solve": cmd_solve,
    "ellscan": cmd_ellscan,
    "verify": cmd_verify,
    "export-slice": cmd_export_slice,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chainsolve", description="Chain-structure ground states on the periodic slab")
    parser.add_argument("command", choices=list(COMMANDS))
    parser.add_argument("--config", help="run configuration file")
    parser.add_argument("--out", default=OUT_DIR, help="output directory")
    parser.add_argument("--only", help="comma-separated criterion ids for verify")
    parser.add_argument("--resume", action="store_true", help="keep completed rows of an existing scan")
    parser.add_argument("--threads", type=int, default=THREADS, help="FFT workers and parallel scan rows")
    parser.add_argument("--plane", action="store_true", help="solve the planar problem instead of the slab")
    parser.add_argument("--field", help="field dump for export-slice")
    parser.add_argument("--axis", type=int, default=2, help="axis normal to the exported plane")
    parser.add_argument("--index", type=int, help="grid index of the exported plane")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=LOG_LEVEL, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.command in ("kernel", "solve", "ellscan") and not args.config:
        print("error: --config is required for this command", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with scipy.fft.set_workers(max(1, args.threads)):
            return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ChainsolveError as e:
        print(f"numerical failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
