"""``vbspin`` command-line entry point.

Exit codes: 0 success, 2 bad config or input, 3 numerical failure,
4 a rerun whose outputs differ from the manifest.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import warnings

import numpy as np

from . import __version__
from ._backend import active_backend, set_backend
from .bath import BathError
from .config import ConfigError, load_config, parse_config, preset_text
from .fitting import (EsrModel, FitError, TimeTrace, fit_esr, fit_exponential_decay,
                      fit_exponential_rise, t1_two_channel)
from .optics import OpticsError, absorption_profile, energy_audit, layer_mean_absorption
from .spectrum import SpectrumError, ensemble_spectrum, splitting_estimate
from .spin import NonHermitianError
from .tables import (DataTable, TableError, atomic_write, read_table, spectrum_from_table,
                     spectrum_table)

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL, EXIT_MISMATCH = 0, 2, 3, 4
MANIFEST = "manifest.json"
NUMERICAL_ERRORS = (FitError, OpticsError, SpectrumError, BathError, NonHermitianError,
                    FloatingPointError, np.linalg.LinAlgError)


class InputError(Exception):
    pass


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _read_input_table(path):
    try:
        return read_table(path)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    except TableError as exc:
        raise InputError(f"{path}: {exc}") from None


# --------------------------------------------------------------------------
# commands; each returns {output name: text} plus an optional failure note
# --------------------------------------------------------------------------

def run_simulate(cfg, inputs, args):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        spec = ensemble_spectrum(cfg.bath, cfg.spin, cfg.broadening, cfg.n_configs,
                                 cfg.grid_array(), cfg.contrast, cfg.lattice)
    try:
        est = splitting_estimate(spec)
        spec.metadata["resonances"] = "single" if est.single else "split"
        spec.metadata["hyperfine_comb"] = str(est.comb).lower()
        spec.metadata["dips_MHz"] = " ".join(f"{x:.2f}" for x in est.dips)
        if est.two_e is not None:
            spec.metadata["dip_separation_MHz"] = f"{est.two_e:.3f}"
    except SpectrumError as exc:
        spec.metadata["resonances"] = f"none ({exc})"
    spec.metadata["backend"] = active_backend()
    return {"spectrum.csv": spectrum_table(spec).to_text()}, None


def run_fit_esr(cfg, inputs, args):
    measured = spectrum_from_table(_read_input_table(inputs["measured"]))
    grid = cfg.grid_array()
    if measured.frequencies[-1] < grid[0] or measured.frequencies[0] > grid[-1]:
        raise InputError("measured spectrum does not overlap the model grid")
    if measured.frequencies[0] > grid[0] + 1e-9 or measured.frequencies[-1] < grid[-1] - 1e-9:
        raise InputError(
            f"model grid [{grid[0]}, {grid[-1]}] MHz extends beyond the measured range "
            f"[{measured.frequencies[0]}, {measured.frequencies[-1]}] MHz; narrow [grid]")
    fo = cfg.fit
    model = EsrModel(cfg.bath, cfg.spin, cfg.broadening, fo.n_configs, grid,
                     rho_max=fo.rho_bounds[1], lattice=cfg.lattice)
    res = fit_esr(measured, model, (fo.rho_bounds, fo.contrast_bounds), cfg.seed, fo.n_refits,
                  fo.n_coarse, fo.float_baseline, fo.maxiter)
    best = res.extra["best_fit"]
    target = measured.resample(grid).values
    overlay = DataTable(["frequency_MHz", "measured_PL", "best_fit_PL", "residual_PL"],
                        np.column_stack([grid, target, best.values, target - best.values]),
                        {"rho_c_per_nm3": res.params["rho_c"], "contrast": res.params["contrast"]})
    out = {"fit_report.txt": res.report(), "fit_record.json": res.record() + "\n",
           "fit_overlay.csv": overlay.to_text()}
    return out, None if res.converged else "ESR fit did not converge"


def run_optics_sweep(cfg, inputs, args):
    o = cfg.optics
    n = int(np.floor((o.t_max - o.t_min) / o.t_step + 1e-9))
    ts = o.t_min + o.t_step * np.arange(n + 1)
    alpha = np.empty_like(ts)
    out = {}
    worst = 0.0
    for i, t in enumerate(ts):
        stack = o.stack.with_thickness(o.sweep_layer, t)
        alpha[i] = layer_mean_absorption(stack, o.sweep_layer)
        worst = max(worst, abs(energy_audit(stack).residual))
        if o.profiles:
            prof = absorption_profile(stack)
            out[f"profiles/profile_t{t:g}nm.csv"] = DataTable(
                ["z_nm", "T", "alpha_per_nm"], np.column_stack([prof.z, prof.T, prof.alpha]),
                {"thickness_nm": t}).to_text()
    meta = {"wavelength_nm": o.stack.wavelength, "dz_nm": o.stack.dz,
            "layers": " / ".join(f"{lay.name or '?'}({lay.thickness:g} nm, n={lay.n})"
                                 for lay in o.stack.layers),
            "sweep_layer": o.sweep_layer, "max_energy_residual": f"{worst:.3e}"}
    out["sweep.csv"] = DataTable(["thickness_nm", "mean_alpha_per_nm"],
                                 np.column_stack([ts, alpha]), meta).to_text()
    return out, None


def run_fit_trace(cfg, inputs, args):
    tab = _read_input_table(inputs["trace"])
    if len(tab.columns) != 2:
        raise InputError("a trace table needs two columns: time, signal")
    try:
        trace = TimeTrace(tab.data[:, 0], tab.data[:, 1], tab.metadata)
    except FitError as exc:
        raise InputError(f"{inputs['trace']}: {exc}") from None
    fitter = fit_exponential_rise if args["mode"] == "rise" else fit_exponential_decay
    res = fitter(trace)
    p = res.params
    if args["mode"] == "rise":
        model = p["steady_state"] - p["amplitude"] * np.exp(-p["rate"] * trace.times)
    else:
        model = p["offset"] + p["amplitude"] * np.exp(-trace.times / p["T1"])
    overlay = DataTable([tab.columns[0], "signal", "model", "residual"],
                        np.column_stack([trace.times, trace.signal, model, trace.signal - model]),
                        {"mode": args["mode"]})
    out = {"trace_report.txt": res.report(), "trace_record.json": res.record() + "\n",
           "trace_overlay.csv": overlay.to_text()}
    return out, None if res.converged else "trace fit flagged: " + "; ".join(res.diagnostics)


def run_t1_model(cfg, inputs, args):
    total = cfg.t1_total if args.get("t1_total_us") is None else args["t1_total_us"]
    phonon = cfg.t1_phonon if args.get("t1_phonon_us") is None else args["t1_phonon_us"]
    if total is None or phonon is None:
        raise InputError("t1-model needs t1_total_us and t1_phonon_us ([t1] section or flags)")
    t1_noise = t1_two_channel(float(total), float(phonon))
    text = (f"t1_total_us: {total:.10g}\nt1_phonon_us: {phonon:.10g}\n"
            f"t1_noise_us: {'inf' if np.isinf(t1_noise) else format(t1_noise, '.10g')}\n")
    return {"t1_report.txt": text}, None


COMMANDS = {
    "simulate-esr": run_simulate,
    "fit-esr": run_fit_esr,
    "optics-sweep": run_optics_sweep,
    "fit-trace": run_fit_trace,
    "t1-model": run_t1_model,
}


# --------------------------------------------------------------------------
# manifest and execution
# --------------------------------------------------------------------------

def execute(command, config_text, source, inputs, args, outdir):
    """Run ``command`` and write its outputs and manifest into ``outdir``."""
    cfg = parse_config(config_text, source)
    outputs, failure = COMMANDS[command](cfg, inputs, args)
    hashes = {}
    for name, text in sorted(outputs.items()):
        path = os.path.join(outdir, name)
        atomic_write(path, text)
        hashes[name] = hashlib.sha256(text.encode()).hexdigest()
    manifest = {
        "tool": "vbspin",
        "version": __version__,
        "command": command,
        "backend": active_backend(),
        "config": config_text,
        "config_source": source,
        "args": args,
        "inputs": {k: {"path": os.path.abspath(v), "sha256": _sha256(v)}
                   for k, v in sorted(inputs.items())},
        "outputs": hashes,
    }
    atomic_write(os.path.join(outdir, MANIFEST), json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return hashes, failure


def rerun(manifest_path, outdir):
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read manifest {manifest_path}: {exc}") from None
    for key in ("command", "config", "args", "inputs", "outputs", "backend"):
        if key not in manifest:
            raise InputError(f"manifest lacks {key!r}")
    inputs = {}
    for name, entry in manifest["inputs"].items():
        path = entry["path"]
        if not os.path.exists(path):
            raise InputError(f"input {name!r} not found at {path}")
        if _sha256(path) != entry["sha256"]:
            raise InputError(f"input {name!r} at {path} changed since the manifest was written")
        inputs[name] = path
    previous = set_backend(manifest["backend"])
    try:
        hashes, failure = execute(manifest["command"], manifest["config"],
                                  manifest.get("config_source"), inputs, manifest["args"], outdir)
    finally:
        set_backend(previous)
    diff = sorted(k for k in set(hashes) | set(manifest["outputs"])
                  if hashes.get(k) != manifest["outputs"].get(k))
    return diff, failure


def build_parser():
    p = argparse.ArgumentParser(prog="vbspin", description=(
        "Charge-noise ESR simulation and fitting, thin-film absorption and relaxation fits."))
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            g = sp.add_mutually_exclusive_group()
            g.add_argument("--config", help="TOML run configuration")
            g.add_argument("--preset", choices=["bulk", "flake2", "flake3"],
                           help="shipped configuration")
        sp.add_argument("-o", "--out", default=".", help="output directory (default: .)")
        sp.add_argument("--backend", choices=["numba", "numpy"], help="kernel backend")

    common(sub.add_parser("simulate-esr", help="simulate an ensemble ESR spectrum"))
    sp = sub.add_parser("fit-esr", help="fit rho_c and contrast to a measured spectrum")
    common(sp)
    sp.add_argument("--measured", required=True, help="spectrum table (frequency_MHz, PL)")
    common(sub.add_parser("optics-sweep", help="mean absorption versus layer thickness"))
    sp = sub.add_parser("fit-trace", help="exponential fit of a PL time trace")
    common(sp)
    sp.add_argument("--trace", required=True, help="trace table (time, signal)")
    sp.add_argument("--mode", choices=["rise", "decay"], required=True)
    sp = sub.add_parser("t1-model", help="noise-limited T1 from total and phonon T1")
    common(sp)
    sp.add_argument("--t1-total-us", type=float)
    sp.add_argument("--t1-phonon-us", type=float)
    sp = sub.add_parser("rerun", help="re-run a command from its manifest")
    sp.add_argument("manifest")
    sp.add_argument("-o", "--out", default=".", help="output directory (default: .)")
    return p


def _config_text(ns):
    if getattr(ns, "preset", None):
        return preset_text(ns.preset), f"preset:{ns.preset}"
    if getattr(ns, "config", None):
        load_config(ns.config)  # early, located diagnostics
        with open(ns.config, encoding="utf-8") as fh:
            return fh.read(), os.path.abspath(ns.config)
    return "", "<defaults>"


def main(argv=None):
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    previous = active_backend()
    try:
        return _dispatch(ns)
    finally:
        set_backend(previous)


def _dispatch(ns):
    try:
        if ns.command == "rerun":
            diff, failure = rerun(ns.manifest, ns.out)
            if diff:
                print("outputs differ from manifest: " + ", ".join(diff), file=sys.stderr)
                return EXIT_MISMATCH
            print(f"reproduced all outputs in {ns.out}")
        else:
            if ns.backend:
                set_backend(ns.backend)
            text, source = _config_text(ns)
            inputs, args = {}, {}
            if ns.command == "fit-esr":
                inputs["measured"] = ns.measured
            elif ns.command == "fit-trace":
                inputs["trace"] = ns.trace
                args["mode"] = ns.mode
            elif ns.command == "t1-model":
                args = {"t1_total_us": ns.t1_total_us, "t1_phonon_us": ns.t1_phonon_us}
            for path in inputs.values():
                if not os.path.exists(path):
                    raise InputError(f"input file not found: {path}")
            hashes, failure = execute(ns.command, text, source, inputs, args, ns.out)
            for name in sorted(hashes):
                print(os.path.join(ns.out, name))
            if ns.command == "t1-model":
                with open(os.path.join(ns.out, "t1_report.txt")) as fh:
                    print(fh.read(), end="")
        if failure:
            print(f"error: {failure}", file=sys.stderr)
            return EXIT_NUMERICAL
        return EXIT_OK
    except (ConfigError, InputError, TableError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
