"""Command-line front end: ``qrcipc {converge,ipc,sweep,memory-curve,oracle}``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from typing import List, Optional

from . import __version__
from .config import PRESETS, RunManifest, parse_config
from .errors import QRCError
from .experiments import (
    SweepPlan,
    derive_seeds,
    linear_memory_curve,
    run_convergence,
    run_realization,
    run_sweep,
)
from .output import write_csv, write_json

log = logging.getLogger("qrcipc")

ORACLE_TOL = 1e-3

# flag dest -> (section, key)
_FLAG_KEYS = {
    "length": ("run", "length"),
    "washout": ("run", "washout"),
    "realizations": ("run", "realizations"),
    "workers": ("run", "workers"),
    "dmax": ("ipc", "d_max"),
    "dt": ("reservoir", "dt"),
    "n_qubits": ("reservoir", "n_qubits"),
    "virtual_nodes": ("reservoir", "virtual_nodes"),
    "field_h": ("reservoir", "field_h"),
    "coupling_scale": ("reservoir", "coupling_scale"),
    "observables": ("reservoir", "observables"),
    "axis": ("sweep", "axis"),
    "n_inputs": ("converge", "n_inputs"),
}


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must fit in an unsigned 64-bit integer: {text}")
    return value


def _float_list(text: str) -> List[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="TOML config file")
    common.add_argument("--seed", type=_u64, help="master seed (unsigned 64-bit)")
    common.add_argument("--out", metavar="DIR", help="output directory (default: $QRCIPC_OUT or ./qrcipc-out)")
    common.add_argument("--preset", choices=sorted(PRESETS), help="run-length preset")
    common.add_argument("--length", type=int, metavar="L", help="evaluation inputs")
    common.add_argument("--washout", type=int, metavar="W", help="discarded initial inputs")
    common.add_argument("--dmax", type=int, metavar="D", help="maximum total degree")
    common.add_argument("--realizations", type=int)
    common.add_argument("--workers", type=int, help="worker processes for sweeps")
    common.add_argument("--dt", type=float)
    common.add_argument("--n-qubits", type=int, dest="n_qubits")
    common.add_argument("--virtual-nodes", type=int, dest="virtual_nodes")
    common.add_argument("--field-h", type=float, dest="field_h")
    common.add_argument("--coupling-scale", type=float, dest="coupling_scale")
    common.add_argument("--observables", metavar="STR", help="e.g. z, x+y, xy+z")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="qrcipc", description=__doc__)
    parser.add_argument("--version", action="version", version=f"qrcipc {__version__}")
    sub = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")
    sub.required = True
    conv = sub.add_parser("converge", parents=[common], help="fading-memory convergence traces")
    conv.add_argument("--dt-values", type=_float_list, dest="dt_values", metavar="LIST")
    conv.add_argument("--n-inputs", type=int, dest="n_inputs")
    sub.add_parser("ipc", parents=[common], help="IPC profile of one realization")
    sw = sub.add_parser("sweep", parents=[common], help="multi-realization parameter sweep")
    sw.add_argument("--axis", help="dt, n_qubits, virtual_nodes, field_h, coupling_scale, observable_set")
    sw.add_argument("--values", metavar="LIST", help="comma-separated axis values")
    sub.add_parser("memory-curve", parents=[common], help="linear memory per delay")
    sub.add_parser("oracle", parents=[common], help="single-qubit analytic self-test")
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    out: dict = {}
    if args.seed is not None:
        out["seed"] = args.seed
    if args.preset is not None:
        out["preset"] = args.preset
    for dest, (section, key) in _FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            out.setdefault(section, {})[key] = value
    if getattr(args, "dt_values", None) is not None:
        out.setdefault("converge", {})["dt_values"] = args.dt_values
    if getattr(args, "values", None) is not None:
        out.setdefault("sweep", {})["values"] = _sweep_values(args.values)
    return out


def _sweep_values(text: str) -> list:
    values = []
    for tok in (t.strip() for t in text.split(",") if t.strip()):
        try:
            values.append(int(tok))
        except ValueError:
            try:
                values.append(float(tok))
            except ValueError:
                values.append(tok)
    return values


def _cast_axis(axis: str, values: list) -> list:
    if axis in ("n_qubits", "virtual_nodes"):
        return [int(v) for v in values]
    if axis == "observable_set":
        return [str(v) for v in values]
    return [float(v) for v in values]


def _single_report(manifest: RunManifest, key: str):
    run = manifest.config["run"]
    coupling_seed, input_seed, surrogate_seed = derive_seeds(manifest.seed, key, 0)
    config = manifest.reservoir_config(coupling_seed)
    return run_realization(
        config, run["length"], run["washout"], input_seed, surrogate_seed, manifest.ipc_settings()
    )


def _write_report(out: str, report) -> None:
    write_json(os.path.join(out, "report.json"), report.to_dict())
    write_csv(os.path.join(out, "records.csv"), report.csv_rows())


def _cmd_ipc(manifest: RunManifest) -> int:
    report = _single_report(manifest, "ipc")
    _write_report(manifest.out_dir, report)
    print(f"normalized total {report.normalized_total:.4f} "
          f"(total {report.total:.4f} / {report.n_vars} variables, threshold {report.threshold:.3e})")
    for d, v in sorted(report.per_degree_totals.items()):
        print(f"  degree {d}: {v:.4f}")
    if report.truncated_degrees:
        print(f"  warning: window edge still above threshold for degrees {report.truncated_degrees}")
    return 0


def _cmd_memory_curve(manifest: RunManifest) -> int:
    report = _single_report(manifest, "memory-curve")
    _write_report(manifest.out_dir, report)
    curve = linear_memory_curve(report)
    bare = dict(linear_memory_curve(report, bare=True))
    rows = [["delay", "capacity", "bare_capacity"]]
    rows += [[str(t), repr(c), repr(bare[t])] for t, c in curve]
    write_csv(os.path.join(manifest.out_dir, "memory_curve.csv"), rows)
    write_json(os.path.join(manifest.out_dir, "memory_curve.json"), {
        "schema": "qrcipc.memory_curve/1",
        "curve": [{"delay": t, "capacity": c, "bare_capacity": bare[t]} for t, c in curve],
        "degree1_total": report.per_degree_totals.get(1, 0.0),
    })
    print(f"linear memory total {report.per_degree_totals.get(1, 0.0):.4f} over {len(curve)} delays")
    return 0


def _cmd_sweep(manifest: RunManifest) -> int:
    cfg = manifest.config
    axis = cfg["sweep"]["axis"]
    plan = SweepPlan(
        base=manifest.reservoir_config(),
        axis=axis,
        values=_cast_axis(axis, cfg["sweep"]["values"]),
        realizations=cfg["run"]["realizations"],
        length=cfg["run"]["length"],
        washout=cfg["run"]["washout"],
    )
    dataset = run_sweep(
        plan, manifest.seed, manifest.ipc_settings(), workers=cfg["run"]["workers"],
        experiment=f"sweep-{axis}", progress=log.info,
    )
    write_json(os.path.join(manifest.out_dir, "dataset.json"), dataset.to_dict())
    write_csv(os.path.join(manifest.out_dir, "dataset.csv"), dataset.csv_rows())
    failed = [p for p in dataset.points if p.get("error")]
    for p in dataset.points:
        if p.get("error"):
            print(f"{axis}={p['value']}: FAILED {p['error']}")
        else:
            s = p["summary"]
            print(f"{axis}={p['value']}: normalized {s['normalized_mean']:.4f} ± {s['normalized_std']:.4f}")
    if failed:
        manifest.status = "incomplete"
        manifest.error = f"{len(failed)} sweep point(s) failed"
        return 1
    return 0


def _cmd_converge(manifest: RunManifest) -> int:
    cfg = manifest.config
    dataset = run_convergence(
        manifest.reservoir_config(derive_seeds(manifest.seed, "converge-couplings", 0)[0]),
        cfg["converge"]["dt_values"],
        master_seed=manifest.seed,
        n_inputs=cfg["converge"]["n_inputs"],
    )
    write_json(os.path.join(manifest.out_dir, "convergence.json"), dataset.to_dict())
    write_csv(os.path.join(manifest.out_dir, "convergence.csv"), dataset.csv_rows())
    for t in dataset.traces:
        print(f"dt={t.dt:g}: inputs to 1e-4 = {t.inputs_to_reach(1e-4)}")
    return 0


def _cmd_oracle(manifest: RunManifest) -> int:
    r = manifest.config["reservoir"]
    r.update(n_qubits=1, coupling_scale=0.0, virtual_nodes=1, observables="z")
    report = _single_report(manifest, "oracle")
    _write_report(manifest.out_dir, report)
    lin = report.per_degree_totals.get(1, 0.0)
    delay0 = next((c.capacity for c in report.records if c.spec.terms == ((0, 1),)), 0.0)
    print(f"total IPC {report.total:.3f} (expected 1.000 ± {ORACLE_TOL:.3f}); "
          f"degree 1: {lin:.4f}, delay 0: {delay0:.6f}")
    ok = abs(report.total - 1.0) <= ORACLE_TOL
    if not ok:
        manifest.status = "incomplete"
        manifest.error = f"oracle total {report.total} outside 1 ± {ORACLE_TOL}"
        print("oracle FAILED", file=sys.stderr)
    return 0 if ok else 1


COMMANDS = {
    "converge": _cmd_converge,
    "ipc": _cmd_ipc,
    "sweep": _cmd_sweep,
    "memory-curve": _cmd_memory_curve,
    "oracle": _cmd_oracle,
}


def dispatch(manifest: RunManifest) -> int:
    """Run a resolved manifest; writes ``manifest.json`` next to the outputs."""
    path = os.path.join(manifest.out_dir, "manifest.json")
    manifest.status = "running"
    try:
        os.makedirs(manifest.out_dir, exist_ok=True)
        write_json(path, manifest.to_dict())
    except OSError as exc:
        print(f"error: cannot write to {manifest.out_dir}: {exc}", file=sys.stderr)
        return 2
    try:
        code = COMMANDS[manifest.subcommand](manifest)
    except Exception as exc:  # noqa: BLE001 - reported via manifest and exit code
        manifest.status = "incomplete"
        manifest.error = f"{type(exc).__name__}: {exc}"
        write_json(path, manifest.to_dict())
        print(f"error: {manifest.error}", file=sys.stderr)
        return 2
    if manifest.status == "running":
        manifest.status = "complete"
    write_json(path, manifest.to_dict())
    return code


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        manifest = parse_config(args.config, _overrides(args), args.subcommand, out_dir=args.out)
    except QRCError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return dispatch(manifest)


if __name__ == "__main__":
    sys.exit(main())
