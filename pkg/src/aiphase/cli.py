"""Command-line interface.

    aiphase phase SCENARIO        phase breakdown and validity report
    aiphase validity SCENARIO     validity report only
    aiphase oracle SCENARIO       engine vs classical/quantum oracles
    aiphase sweep SCENARIO        CSV table over one scalar parameter
    aiphase verify                acceptance checks

SCENARIO is a JSON file or the name of a shipped scenario.  Exit codes: 0 on
success, 2 when the validity gate refuses the configuration, 1 on any other
error (including a failed comparison or acceptance check).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, acceptance, config
from .engine import check_validity, phase_total
from .oracles import classical_oracle, verify_engine
from .validity import ValidityError

EXIT_OK, EXIT_ERROR, EXIT_REFUSED = 0, 1, 2

SWEEP_COLUMNS = ("phi0_rad", "phi1_classical_rad", "phi1_wavepacket_rad", "phi2_rad",
                 "correction_rad", "total_rad", "contrast", "epsilon", "eta", "d_over_xi",
                 "eta_d_over_xi", "validity")


def _header(sc: config.Scenario) -> dict:
    return {"tool": {"name": "aiphase", "version": __version__}, "scenario": sc.config}


def _finite(obj):
    """Replace non-finite floats by None so the output stays strict JSON."""
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def run_phase(sc: config.Scenario) -> dict:
    b = phase_total(sc.sequence(), sc.potential(), sc.state(), sc.engine_options())
    return {**_header(sc), "phase": b.to_dict(), "validity": b.validity.to_dict()}


def run_validity(sc: config.Scenario) -> dict:
    rep = check_validity(sc.sequence(), sc.potential(), sc.state(), sc.engine_options())
    return {**_header(sc), "validity": rep.to_dict()}


def run_oracle(sc: config.Scenario) -> dict:
    o = sc.config["oracles"]
    seq, pot, state = sc.sequence(), sc.potential(), sc.state()
    out = _header(sc)
    if not (o["classical"] or o["quantum"]):
        # nothing to compare against; report the raw classical oracle
        out["classical_oracle"] = classical_oracle(seq, pot, o["classical_steps_per_segment"]).to_dict()
        return out
    table = verify_engine(seq, pot, state, sc.tolerances(), engine_options=sc.engine_options(),
                          classical=o["classical"], quantum=o["quantum"])
    out["verification"] = table.to_dict()
    return out


def run_scenario(sc: config.Scenario) -> dict:
    """Phase breakdown plus, when enabled in the scenario, the oracle comparison."""
    out = run_phase(sc)
    o = sc.config["oracles"]
    if o["classical"] or o["quantum"]:
        out["verification"] = run_oracle(sc)["verification"]
    return out


def _sweep_row(args):
    cfg, base_dir, param, value = args
    sc = config.Scenario(cfg, Path(base_dir)).with_value(param, value)
    sc = config.Scenario({**sc.config, "engine": {**sc.config["engine"], "allow_invalid": True}},
                         sc.base_dir)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        b = phase_total(sc.sequence(), sc.potential(), sc.state(), sc.engine_options())
    v = b.validity
    status = "refuse" if v.refused else "warn" if v.warned else "ok"
    vals = b.to_dict()
    return [value] + [vals[c] for c in SWEEP_COLUMNS[:7]] + [
        v.epsilon, v.eta, v.d_over_xi, v.eta_d_over_xi, status]


def sweep(sc: config.Scenario, parameter: str, values, workers: int = 1) -> str:
    """CSV text, one row per value in input order.

    Refused rows are still computed and marked in the ``validity`` column.
    """
    sc.value_at(parameter)  # fail early on a bad path
    leaf = parameter.split(".")[-1]
    jobs = [(sc.config, str(sc.base_dir), parameter, float(v)) for v in values]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_sweep_row, jobs))
    else:
        rows = [_sweep_row(j) for j in jobs]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow((leaf,) + SWEEP_COLUMNS)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()


def _values(args, sc) -> list[float]:
    if args.linspace:
        a, b, n = args.linspace
        return list(np.linspace(a, b, int(n)))
    if args.logspace:
        a, b, n = args.logspace
        return list(np.geomspace(a, b, int(n)))
    if args.values is not None:
        return list(args.values)
    if sc.config["sweep"] is not None:
        return list(sc.config["sweep"]["values"])
    raise config.ConfigError("no sweep values: pass --values/--linspace/--logspace or add a sweep section")


def _emit(doc: dict, out: str | None, sc: config.Scenario | None) -> None:
    text = json.dumps(_finite(doc), indent=2, sort_keys=True, allow_nan=False) + "\n"
    target = out or (sc.config["output"]["result_path"] if sc is not None else None)
    if target:
        Path(target).write_text(text)
    else:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aiphase", description="Perturbative atom-interferometer phases.")
    p.add_argument("--version", action="version", version=f"aiphase {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("phase", "phase breakdown and validity report"),
                        ("validity", "validity report only"),
                        ("oracle", "compare the engine with the oracles")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("scenario")
        s.add_argument("-o", "--output", help="result file (default: stdout)")
    s = sub.add_parser("sweep", help="tabulate the phase over one scalar parameter")
    s.add_argument("scenario")
    s.add_argument("--param", help="dotted path, e.g. geometry.T_s")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--values", type=float, nargs="*")
    g.add_argument("--linspace", type=float, nargs=3, metavar=("START", "STOP", "N"))
    g.add_argument("--logspace", type=float, nargs=3, metavar=("START", "STOP", "N"))
    s.add_argument("--workers", type=int)
    s.add_argument("-o", "--output", help="CSV file (default: stdout)")
    s = sub.add_parser("verify", help="run the acceptance checks")
    s.add_argument("--skip", type=int, nargs="*", default=[], help="check numbers to leave out")
    sub.add_parser("scenarios", help="list the shipped scenarios")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "scenarios":
            print("\n".join(config.shipped_scenarios()))
            return EXIT_OK
        if args.command == "verify":
            results = acceptance.run_all(skip=set(args.skip), stream=sys.stdout)
            return EXIT_OK if all(r.passed for r in results) else EXIT_ERROR
        sc = config.load(args.scenario)
        if args.command == "sweep":
            spec = sc.config["sweep"] or {}
            param = args.param or spec.get("parameter")
            if not param:
                raise config.ConfigError("no sweep parameter: pass --param or add a sweep section")
            workers = args.workers or spec.get("workers", 1)
            text = sweep(sc, param, _values(args, sc), workers)
            target = args.output or sc.config["output"]["csv_path"]
            if target:
                Path(target).write_text(text)
            else:
                sys.stdout.write(text)
            return EXIT_OK
        runner = {"phase": run_scenario, "validity": run_validity, "oracle": run_oracle}[args.command]
        doc = runner(sc)
        _emit(doc, args.output, sc)
        ver = doc.get("verification")
        if ver is not None and not ver["passed"]:
            print("verification failed", file=sys.stderr)
            return EXIT_ERROR
        return EXIT_OK
    except ValidityError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        rep = exc.report
        print(f"  epsilon={rep.epsilon:.3g} d/xi={rep.d_over_xi:.3g} "
              f"eta*d/xi={rep.eta_d_over_xi:.3g} (refuse at {rep.refuse_threshold:g})", file=sys.stderr)
        return EXIT_REFUSED
    except Exception as exc:  # noqa: BLE001 - surfaced to the user with context
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
