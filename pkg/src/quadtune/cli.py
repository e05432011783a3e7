"""Command-line entry point: ``quadtune spectrum|sweep|decay|fit|forecast``.

Exit codes: 0 ok, 2 config error, 3 numeric failure, 4 data-schema mismatch.
Each run writes its outputs plus ``manifest.json`` into ``--out``. Worker
threads for independent sweep points default to 1 and can be raised with the
``QUADTUNE_THREADS`` environment variable.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import experiment as ex
from .dynamics import QuadratureError, coherence_decay, t2_versus_pulses
from .endor import M_LEVELS, Spectrum, synthesize_spectrum
from .estimator import fit_fq_angular, fit_gn, fit_scaling
from .seqlang import ConfigError, ExperimentConfig, parse, validate
from .spincore import (PerturbationWarning, build_hamiltonian, larmor_frequency, perturbative_shift_first,
                       perturbative_shift_second, spin_operators, transition_frequencies)
from .strainmap import coupling_fq, piezo_shift_forecast, rotate_to_field_frame

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_SCHEMA = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _threads() -> int:
    raw = os.environ.get("QUADTUNE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise CliError(EXIT_CONFIG, f"QUADTUNE_THREADS must be an integer, got {raw!r}") from None


def _pmap(fn, items):
    n = _threads()
    if n == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _m_tag(m: float) -> str:
    return f"m{'+' if m > 0 else '-'}{int(round(abs(2 * m)))}_2"


def _rows_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _check_finite(rows):
    for r in rows:
        for v in r:
            if isinstance(v, (float, np.floating)) and not math.isfinite(v):
                raise CliError(EXIT_NUMERIC, "non-finite value in output")


class Run:
    """Collects outputs and writes the manifest (also for interrupted runs)."""

    def __init__(self, command: str, out: Path, config_path: str | None, config_bytes: bytes | None,
                 seed: int):
        self.command = command
        self.out = out
        self.config_path = config_path
        self.config_hash = hashlib.sha256(config_bytes).hexdigest() if config_bytes is not None else None
        self.seed = seed
        self.outputs: list[dict] = []
        self.t0 = time.perf_counter()

    def write(self, name: str, text: str):
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / name
        data = text.encode("utf-8")
        path.write_bytes(data)
        self.outputs.append({"path": name, "sha256": hashlib.sha256(data).hexdigest()})

    def finish(self, status: str):
        manifest = {
            "command": self.command,
            "config_path": self.config_path,
            "config_sha256": self.config_hash,
            "seed": self.seed,
            "outputs": self.outputs,
            "status": status,
            "wall_time_s": time.perf_counter() - self.t0,
            "version": __version__,
        }
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_config(path: str | None) -> tuple[ExperimentConfig, bytes]:
    if path is None:
        raise CliError(EXIT_CONFIG, "--config is required for this command")
    p = Path(path)
    try:
        raw = p.read_bytes()
    except OSError as exc:
        raise CliError(EXIT_CONFIG, f"{path}: cannot read config: {exc.strerror or exc}") from None
    try:
        cfg = parse(raw.decode("utf-8"))
    except UnicodeDecodeError:
        raise CliError(EXIT_CONFIG, f"{path}: config is not valid UTF-8") from None
    except ConfigError as exc:
        raise CliError(EXIT_CONFIG, "\n".join(f"{path}:{d}" for d in exc.diagnostics)) from None
    diags = validate(cfg)
    for d in diags:
        if d.severity == "warning":
            print(f"{path}:{d}", file=sys.stderr)
    errors = [d for d in diags if d.severity == "error"]
    if errors:
        raise CliError(EXIT_CONFIG, "\n".join(f"{path}:{d}" for d in errors))
    return cfg, raw


def _format(args, cfg: ExperimentConfig | None) -> str:
    if args.format:
        return args.format
    return cfg.output.format if cfg is not None else "json"


# ------------------------------------------------------------------ commands

def cmd_spectrum(args, run: Run, cfg: ExperimentConfig):
    sys_ = ex.spin_system(cfg)
    if abs(sys_.I - 1.5) > 1e-12:
        raise CliError(EXIT_CONFIG, "ENDOR spectra are defined for I = 3/2 only")
    base = ex.endor_config(cfg)
    fields = ex.endor_fields(cfg)
    efg = ex.efg_tensor(cfg)
    broad = ex.broadening_model(cfg)

    def one(i):
        from dataclasses import replace

        c = replace(base, ionize=M_LEVELS[i], read=None)
        return synthesize_spectrum(c, sys_, fields[i], efg, broad, cfg.endor.points)

    spectra = _pmap(one, range(4))
    for m, spec in zip(M_LEVELS, spectra):
        _check_finite(zip(spec.frequency, spec.signal))
        run.write(f"spectrum_{_m_tag(m)}.csv", spec.to_csv())
        run.write(f"spectrum_{_m_tag(m)}.json", spec.to_json() + "\n")


def _sweep_values(cfg: ExperimentConfig) -> np.ndarray:
    sw = cfg.sweep
    return np.linspace(sw.start.value, sw.stop.value, sw.points)


def _shift_rows(cfg: ExperimentConfig, value: float, variable: str):
    sys_ = ex.spin_system(cfg)
    B0, theta, strain = cfg.field.B0, None, None
    if variable == "theta":
        theta = value
    elif variable == "B0":
        B0 = value
    elif variable == "strain":
        strain = value
    axis = ex.field_axis(cfg, theta, value if variable == "phi" else None)
    f0 = larmor_frequency(sys_, B0)
    efg = ex.efg_tensor(cfg, strain)
    V_lab = rotate_to_field_frame(efg.matrix, axis)
    table = transition_frequencies(build_hamiltonian(sys_, f0, V_lab), spin_operators(sys_.I)[0])
    cpl = coupling_fq(efg, sys_)
    cos_t = float(np.clip(abs(np.dot(cpl.axis, axis)), 0.0, 1.0))
    th_eff = math.acos(cos_t)
    rows = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PerturbationWarning)
        for t in table:
            first = perturbative_shift_first(cpl.signed, th_eff, t.m_hi, sys_.I)
            second = perturbative_shift_second(cpl.signed, f0, th_eff, t.m_hi, sys_.I) if f0 > 0 else 0.0
            rows.append([value, t.label, t.frequency - f0, first, first + second])
    return rows


def cmd_sweep(args, run: Run, cfg: ExperimentConfig):
    if cfg.sweep is None:
        raise CliError(EXIT_CONFIG, "config has no [sweep] section")
    variable = cfg.sweep.variable
    if variable == "B0" and cfg.sweep.start.value < 0:
        raise CliError(EXIT_CONFIG, "B0 sweep must be non-negative")
    values = _sweep_values(cfg)
    blocks = _pmap(lambda v: _shift_rows(cfg, float(v), variable), values)
    rows = [r for b in blocks for r in b]
    _check_finite(rows)
    header = [variable, "transition", "exact_shift_Hz", "first_order_Hz", "perturbative_shift_Hz"]
    if _format(args, cfg) == "csv":
        run.write("sweep.csv", _rows_csv(header, rows))
    else:
        recs = [dict(zip(header, [float(r[0]), r[1], float(r[2]), float(r[3]), float(r[4])])) for r in rows]
        run.write("sweep.json", json.dumps({"variable": variable, "rows": recs}, indent=1) + "\n")


def cmd_decay(args, run: Run, cfg: ExperimentConfig):
    if cfg.noise is None:
        raise CliError(EXIT_CONFIG, "config has no [noise] section")
    noise = ex.noise_model(cfg)
    pulses = list(cfg.noise.pulses)
    report: dict = {"alpha": noise.alpha, "amplitude": noise.amplitude, "pulses": pulses}
    rows = []
    if noise.amplitude == 0:
        # no dephasing at all: W = 1 everywhere and no decay time exists
        grid = np.geomspace(1e-4, 1.0, 16)
        for n in pulses:
            rows += [[n, float(t), 1.0] for t in grid]
        report["points"] = []
        report["fit"] = {"model": "power_law", "converged": False,
                         "message": "no decay: noise amplitude is zero"}
    else:
        guess = cfg.noise.T2 or 1e-3
        results = t2_versus_pulses(noise, pulses, guess=guess)
        for n, T2, beta, curve in results:
            rows += [[n, float(t), float(w)] for t, w in zip(curve.t, curve.amplitude)]
        points = [(n, T2) for n, T2, _, _ in results]
        report["points"] = [{"n": n, "T2_s": T2, "beta": beta} for n, T2, beta, _ in results]
        if len(points) >= 2:
            fit = fit_scaling(points)
            report["fit"] = fit.to_dict()
            report["exponent"] = fit.estimates["exponent"]
    _check_finite(rows)
    if _format(args, cfg) == "csv":
        run.write("decay.csv", _rows_csv(["n", "t_s", "W"], rows))
    else:
        recs = [{"n": int(n), "t_s": t, "W": w} for n, t, w in rows]
        run.write("decay.json", json.dumps(recs, indent=1) + "\n")
    run.write("decay_fit.json", json.dumps(report, indent=2, sort_keys=True) + "\n")


def _read_table(path: str, header: list[str]) -> np.ndarray:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(EXIT_SCHEMA, f"{path}: cannot read data: {exc.strerror or exc}") from None
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    if not rows:
        raise CliError(EXIT_SCHEMA, f"{path}: empty data file")
    if [c.strip() for c in rows[0]] != header:
        raise CliError(EXIT_SCHEMA, f"{path}: expected header {','.join(header)}")
    if len(rows) == 1:
        raise CliError(EXIT_SCHEMA, f"{path}: no data rows")
    try:
        arr = np.array([[float(c) for c in r] for r in rows[1:]])
    except ValueError as exc:
        raise CliError(EXIT_SCHEMA, f"{path}: {exc}") from None
    if arr.shape[1] != len(header) or not np.all(np.isfinite(arr)):
        raise CliError(EXIT_SCHEMA, f"{path}: rows must hold {len(header)} finite numbers")
    return arr


def _read_spectrum(path: str) -> Spectrum:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(EXIT_SCHEMA, f"{path}: cannot read data: {exc.strerror or exc}") from None
    if not text.strip():
        raise CliError(EXIT_SCHEMA, f"{path}: empty data file")
    try:
        if path.endswith(".json"):
            return Spectrum.from_json(text)
        return Spectrum.from_csv(text)
    except (ValueError, json.JSONDecodeError) as exc:
        raise CliError(EXIT_SCHEMA, f"{path}: {exc}") from None


def cmd_fit(args, run: Run, cfg: ExperimentConfig | None):
    if not args.data:
        raise CliError(EXIT_SCHEMA, "fit needs at least one --data file")
    model = args.model
    if model == "gn":
        spectra = [_read_spectrum(p) for p in args.data]
        if args.b0:
            B0s = args.b0
        else:
            B0s = [s.meta.get("B0_T") for s in spectra]
            if any(b is None for b in B0s):
                raise CliError(EXIT_SCHEMA, "spectra lack B0_T metadata; pass --b0 per file")
        if len(B0s) != len(spectra):
            raise CliError(EXIT_SCHEMA, "one --b0 value per data file required")
        sys_ = ex.spin_system(cfg) if cfg is not None else None
        try:
            res = fit_gn(spectra, B0s, sys_) if sys_ else fit_gn(spectra, B0s)
        except ValueError as exc:
            raise CliError(EXIT_SCHEMA, str(exc)) from None
    elif model in ("angular1", "angular2"):
        arr = np.vstack([_read_table(p, ["theta_rad", "shift_Hz"]) for p in args.data])
        if args.f0 is not None:
            f0 = args.f0
        elif cfg is not None:
            f0 = larmor_frequency(ex.spin_system(cfg), cfg.field.B0)
        else:
            raise CliError(EXIT_CONFIG, "angular fits need --f0 or --config")
        try:
            res = fit_fq_angular(arr[:, 0], arr[:, 1], int(model[-1]), f0)
        except ValueError as exc:
            raise CliError(EXIT_SCHEMA, str(exc)) from None
    else:
        arr = np.vstack([_read_table(p, ["n", "T2_s"]) for p in args.data])
        try:
            res = fit_scaling([tuple(r) for r in arr])
        except ValueError as exc:
            raise CliError(EXIT_SCHEMA, str(exc)) from None
    run.write("fit.json", res.to_json() + "\n")
    for k, v in res.estimates.items():
        print(f"{k} = {v:.10g} +/- {res.sigmas[k]:.3g}")
    for k, v in res.extras.items():
        print(f"{k} = {v:.10g}")


def cmd_forecast(args, run: Run, cfg: ExperimentConfig):
    try:
        geometry = ex.geometry_name(cfg)
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    eps = args.eps if args.eps is not None else ex.strain_value(cfg)
    st = cfg.strain
    shift = piezo_shift_forecast(eps, ex.gradient_elastic(cfg), geometry, ex.spin_system(cfg),
                                 C=ex.stiffness(cfg), perp_model=st.perp_model, eps_trans=st.eps_trans or 0.0)
    report = {"geometry": geometry, "strain": eps, "perp_model": st.perp_model,
              "S11": cfg.tensor_s.S11, "S44": cfg.tensor_s.S44, "shear": cfg.tensor_s.shear,
              "outer_shift_Hz": shift}
    _check_finite([[shift]])
    if _format(args, cfg) == "csv":
        run.write("forecast.csv", _rows_csv(["geometry", "strain", "outer_shift_Hz"], [[geometry, eps, shift]]))
    else:
        run.write("forecast.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(f"{geometry} strain {eps:g}: outer-line shift {shift / 1e3:.3f} kHz")


COMMANDS = {"spectrum": cmd_spectrum, "sweep": cmd_sweep, "decay": cmd_decay, "fit": cmd_fit,
            "forecast": cmd_forecast}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="quadtune", description="Strain-tuned quadrupole spectra of ionized donors.")
    p.add_argument("--version", action="version", version=f"quadtune {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="experiment description (.qsx)")
        s.add_argument("--out", default="out", help="output directory")
        s.add_argument("--seed", type=int, default=None)
        s.add_argument("--format", choices=("csv", "json"), default=None)
        if name == "fit":
            s.add_argument("--model", choices=("gn", "angular1", "angular2", "scaling"), required=True)
            s.add_argument("--data", nargs="+", default=[])
            s.add_argument("--b0", type=float, nargs="+", help="field (T) per spectrum file")
            s.add_argument("--f0", type=float, help="Larmor frequency (Hz) for angular fits")
        if name == "forecast":
            s.add_argument("--eps", type=float, help="strain value overriding the config")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    run = None
    try:
        cfg, raw = (None, None)
        if args.command != "fit" or args.config is not None:
            cfg, raw = load_config(args.config)
        seed = args.seed if args.seed is not None else (cfg.output.seed if cfg else 0)
        run = Run(args.command, Path(args.out), args.config, raw, seed)
        COMMANDS[args.command](args, run, cfg)
    except CliError as exc:
        print(str(exc), file=sys.stderr)
        if run is not None and run.outputs:
            run.finish("partial")
        return exc.code
    except (QuadratureError, ArithmeticError, np.linalg.LinAlgError, ValueError, RuntimeError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        if run is not None and run.outputs:
            run.finish("partial")
        return EXIT_NUMERIC
    except KeyboardInterrupt:
        if run is not None:
            run.finish("partial")
        raise
    run.finish("complete")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
