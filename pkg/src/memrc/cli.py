"""memrc command-line interface.

Exit codes: 0 success, 2 input or config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .characterize import (
    IvTrace,
    fit_device,
    loop_area,
    ppf,
    ppf_surface,
    simulate_hysteresis,
    simulate_step_decay,
    simulate_sweep,
    simulate_trace,
)
from .config import ExperimentConfig, load_config, parse_config, parse_list, parse_quantity, sonds_config_dict
from .device import PRESETS_ENV, STANDARD_BANK, NoiseSpec, load_presets
from .errors import TraceFormatError
from .readout import model_to_json
from .reservoir import ReservoirConfig
from .search import grid_search
from .tasks import VoltageWaveform, gen_sonds

EXIT_INPUT = 2
EXIT_NUMERIC = 3


class InputError(ValueError):
    pass


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


_LAST_OUT: list[Path] = []


def _outdir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    _LAST_OUT[:] = [p]
    return p


def _log(out: Path, argv, status: str):
    """Timestamps live only in this sidecar so artifacts stay byte-identical."""
    with open(out / "run.log", "a") as fh:
        fh.write(f"{time.strftime('%Y-%m-%dT%H:%M:%S')} memrc {__version__} {' '.join(argv)} -> {status}\n")


def _q(unit):
    def conv(text):
        try:
            return parse_quantity(text, unit)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    return conv


def _ql(unit):
    def conv(text):
        try:
            vals = parse_list(text, unit)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
        if not vals:
            raise argparse.ArgumentTypeError("empty list")
        return vals
    return conv


def _device(args):
    presets = load_presets(args.presets)
    if args.device not in presets:
        raise InputError(f"unknown device label {args.device!r}; known: {', '.join(sorted(presets))}")
    return presets[args.device]


def _noise(args) -> NoiseSpec:
    return NoiseSpec(args.noise or 0.0, args.seed)


def _rows_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()


# --- commands -------------------------------------------------------------------

def cmd_characterize(args) -> dict:
    p = _device(args)
    out = _outdir(args.out)
    noise = _noise(args)
    summary = {"device": p.label, "which": args.which}
    if args.which == "sweep":
        tr = simulate_sweep(p, args.rate, args.v_max, args.dt or 1e-3, noise=noise)
        (out / "sweep.csv").write_text(tr.to_csv())
        summary.update(rate_V_per_s=args.rate, v_max_V=args.v_max, samples=len(tr))
    elif args.which == "hysteresis":
        tr = simulate_hysteresis(p, args.freq, args.v_max, args.dt or 1e-3, noise=noise)
        (out / "hysteresis.csv").write_text(tr.to_csv())
        summary.update(freq_Hz=args.freq, loop_area_normalized=loop_area(tr), loop_area_AV=loop_area(tr, False))
    elif args.which == "decay":
        v_high = args.v_high or p.v_high
        tr = simulate_step_decay(p, v_high, args.v_lows, dt=args.dt or 1e-4, noise=noise)
        (out / "decay.csv").write_text(tr.to_csv())
        summary.update(v_high_V=v_high, samples=len(tr))
    elif args.which == "ppf":
        r = ppf(p, args.v, args.v_off, args.pw, args.ipi, args.dt or 1e-5, noise=noise)
        summary.update(r.to_dict(), v_pulse_V=args.v, v_off_V=args.v_off)
    elif args.which == "ppf-surface":
        pws, ipis = args.pw_grid, args.ipi_grid
        surf = ppf_surface(p, pws, ipis, args.v, args.v_off, args.dt or 1e-5)
        rows = [(pw, ipi, surf[a, b]) for a, pw in enumerate(pws) for b, ipi in enumerate(ipis)]
        (out / "ppf_surface.csv").write_text(_rows_csv(("pw_s", "ipi_s", "ppf_percent"), rows))
        summary.update(points=len(rows))
    (out / "summary.json").write_text(_dump(summary))
    return summary


def _read_trace(path) -> IvTrace:
    path = Path(path)
    if not path.exists():
        raise InputError(f"file not found: {path}")
    try:
        return IvTrace.from_csv(path.read_text())
    except TraceFormatError as exc:
        raise TraceFormatError(f"{path}: {exc}") from None


def cmd_fit(args) -> dict:
    sweep, decay = _read_trace(args.sweep), _read_trace(args.decay)
    if args.g_scale is not None:
        g_scale = args.g_scale
    elif args.device:
        g_scale = _device(args).g_scale
    else:
        raise InputError("need --g-scale or --device to fix the conductance scale")
    rep = fit_device(sweep, decay, g_scale, args.v_high, args.noise or 0.0, args.vt, args.label)
    out = _outdir(args.out)
    (out / "fit.json").write_text(_dump(rep.to_dict()))
    return {"params": rep.params.to_dict(), "residuals": rep.residuals}


def _config_from_args(args, task) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config)
        if cfg.task != task:
            raise InputError(f"config task is {cfg.task!r}, expected {task!r}")
        return cfg
    data = {"task": task, "bank": list(args.bank or STANDARD_BANK)}
    if args.presets:
        data["presets"] = args.presets
    return parse_config(data)


def cmd_sonds(args) -> dict:
    from .pipelines import sonds_experiment
    cfg = _config_from_args(args, "sonds")
    seed = cfg.seed if args.seed is None else args.seed
    res = sonds_experiment(cfg.reservoir(), cfg.encoding, seed, cfg.washout)
    out = _outdir(args.out or cfg.output_dir)
    for name, y, p in (("train", res.y_train, res.pred_train), ("test", res.y_test, res.pred_test)):
        rows = [(k + cfg.washout, a, b) for k, (a, b) in enumerate(zip(y, p))]
        (out / f"predictions_{name}.csv").write_text(_rows_csv(("k", "y_true", "y_pred"), rows))
    (out / "model.json").write_text(model_to_json(res.model) + "\n")
    summary = {"task": "sonds", "seed": seed, "devices": cfg.reservoir().device_labels(), **res.summary()}
    (out / "summary.json").write_text(_dump(summary))
    return summary


def cmd_neuro(args) -> dict:
    from .pipelines import neuro_features, neuro_readout
    cfg = _config_from_args(args, "neuro")
    if not args.config:
        cfg.bank = cfg.bank[:1] * 3
        cfg.offsets = [0.085, 0.090, 0.095]
    readout = args.readout or cfg.readout
    if readout == "linear":
        readout = "convfc"
    f = args.kernel or cfg.kernel_f
    seed = cfg.seed if args.seed is None else args.seed
    out = _outdir(args.out or cfg.output_dir)

    def one(rc: ReservoirConfig):
        feats = neuro_features(rc, seed, cfg.per_class, cfg.n_train_per_class, cfg.scale, cfg.nodes, cfg.norm,
                               cfg.neural_sample_rate)
        return neuro_readout(feats, readout, min(f, cfg.nodes), cfg.train)

    rc = cfg.reservoir()
    res = one(rc)
    summary = {"task": "neuro", "seed": seed, "devices": rc.device_labels(), "norm": cfg.norm, **res.summary()}
    if args.per_offset:
        per = {}
        for k, (dev, off) in enumerate(zip(rc.devices, rc.offset_array)):
            single = ReservoirConfig((dev,), (float(off),), rc.method, rc.dt, rc.noise)
            per[single.device_labels()[0] + f"@{off * 1e3:g}mV"] = one(single).test_accuracy
        summary["per_offset_accuracy"] = per
    (out / "confusion.json").write_text(_dump(res.confusion.to_dict()))
    (out / "loss.csv").write_text(_rows_csv(("epoch", "loss"), list(enumerate(res.losses))))
    (out / "model.json").write_text(model_to_json(res.model) + "\n")
    (out / "summary.json").write_text(_dump(summary))
    return summary


def cmd_gridsearch(args) -> dict:
    from .search import GridSpec
    cfg = _config_from_args(args, "sonds")
    g = cfg.grid
    if any(x is not None for x in (args.gamma_points, args.delta_points, args.dt_points)):
        def pts(axis, n):
            return len(axis) if n is None else n
        g = GridSpec.default(pts(g.gamma_grid, args.gamma_points), pts(g.delta_grid, args.delta_points),
                             pts(g.dt_grid, args.dt_points),
                             (min(g.gamma_grid), max(g.gamma_grid)), (min(g.delta_grid), max(g.delta_grid)),
                             (min(g.dt_grid), max(g.dt_grid)))
    seed = cfg.seed if args.seed is None else args.seed
    train, test = gen_sonds(seed=seed)
    rc = cfg.reservoir()
    workers = max(1, args.threads or 1)
    report = grid_search(rc, g, train, test, cfg.washout, workers)
    out = _outdir(args.out or cfg.output_dir)
    (out / "grid.csv").write_text(report.to_csv())
    if report.failures:
        with open(out / "failures.log", "w") as fh:
            for r in report.failures:
                fh.write(f"{r.gamma!r},{r.delta!r},{r.dt_hold!r}: {r.error}\n")
    summary = {"cells": len(report.results), "failures": len(report.failures), "seed": seed}
    if report.results and report.best.ok:
        b = report.best
        n_sub = rc.substeps(b.dt_hold)
        labels = cfg.raw.get("bank") if cfg.raw.get("bank") else list(STANDARD_BANK)
        best = sonds_config_dict(labels, b.gamma, b.delta, b.dt_hold, seed, n_sub / b.dt_hold, cfg.washout,
                                 str(out / "best"))
        if cfg.raw.get("presets"):
            best["presets"] = cfg.raw["presets"]
        (out / "best_config.json").write_text(_dump(best))
        summary["best"] = {"gamma_V": b.gamma, "delta_V": b.delta, "dt_s": b.dt_hold,
                           "nmse_train": b.nmse_train, "nmse_test": b.nmse_test}
    (out / "summary.json").write_text(_dump(summary))
    return summary


def cmd_simulate(args) -> dict:
    p = _device(args)
    path = Path(args.waveform)
    if not path.exists():
        raise InputError(f"file not found: {path}")
    try:
        wf = VoltageWaveform.from_csv(path.read_text())
    except TraceFormatError as exc:
        raise TraceFormatError(f"{path}: {exc}") from None
    tr = simulate_trace(p, wf.v, wf.dt, method=args.method, noise=_noise(args))
    out = _outdir(args.out)
    (out / "trace.csv").write_text(tr.to_csv())
    return {"device": p.label, "samples": len(tr), "dt_s": wf.dt}


# --- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="memrc", description="Memristor reservoir simulator and benchmarks.")
    ap.add_argument("--version", action="version", version=f"memrc {__version__}")
    ap.add_argument("--presets", default=None, help=f"preset JSON (default: ${PRESETS_ENV} or bundled)")
    ap.add_argument("--threads", type=int, default=None, help="cap on worker processes")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, device=True):
        if device:
            p.add_argument("--device", required=True, help="preset label, e.g. 3.0uM")
        p.add_argument("--out", default="out")
        p.add_argument("--noise", type=_q("A"), default=None, help="current noise RMS, e.g. 0.8nA")
        p.add_argument("--seed", type=int, default=0)

    c = sub.add_parser("characterize", help="simulate a characterization protocol")
    common(c)
    c.add_argument("--which", required=True, choices=["sweep", "hysteresis", "decay", "ppf", "ppf-surface"])
    c.add_argument("--rate", type=_q("V/s"), default=2e-3, help="sweep rate, e.g. 2mV/s")
    c.add_argument("--v-max", type=_q("V"), default=0.170)
    c.add_argument("--freq", type=_q("Hz"), default=0.2, help="hysteresis frequency, e.g. 200mHz")
    c.add_argument("--v", type=_q("V"), default=0.170, help="pulse level")
    c.add_argument("--v-off", type=_q("V"), default=0.0)
    c.add_argument("--pw", type=_q("s"), default=5e-3)
    c.add_argument("--ipi", type=_q("s"), default=5e-3)
    c.add_argument("--pw-grid", type=_ql("s"), default=[1e-3, 5e-3, 10e-3, 20e-3])
    c.add_argument("--ipi-grid", type=_ql("s"), default=[1e-3, 2e-3, 5e-3, 10e-3, 20e-3])
    c.add_argument("--v-high", type=_q("V"), default=None)
    c.add_argument("--v-lows", type=_ql("V"), default=None, help="comma list, e.g. 10mV,50mV")
    c.add_argument("--dt", type=_q("s"), default=None)
    c.set_defaults(func=cmd_characterize)

    f = sub.add_parser("fit", help="fit device parameters to sweep + step-decay traces")
    f.add_argument("--sweep", required=True)
    f.add_argument("--decay", required=True)
    f.add_argument("--g-scale", type=float, default=None, help="conductance per unit pore density")
    f.add_argument("--device", default=None, help="take the conductance scale from this preset")
    f.add_argument("--v-high", type=_q("V"), default=None)
    f.add_argument("--vt", type=_q("V"), default=None, help="fix the threshold instead of estimating it")
    f.add_argument("--noise", type=_q("A"), default=None)
    f.add_argument("--label", default="fitted")
    f.add_argument("--out", default="out")
    f.set_defaults(func=cmd_fit)

    for name, func, helptext in (("sonds", cmd_sonds, "SONDS prediction benchmark"),
                                 ("gridsearch", cmd_gridsearch, "encoding grid search for SONDS")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", default=None)
        s.add_argument("--bank", nargs="+", default=None)
        s.add_argument("--seed", type=int, default=None)
        s.add_argument("--out", default=None)
        s.set_defaults(func=func)
        if name == "gridsearch":
            for ax in ("gamma", "delta", "dt"):
                s.add_argument(f"--{ax}-points", type=int, default=None)

    n = sub.add_parser("neuro", help="neural-activity classification benchmark")
    n.add_argument("--config", default=None)
    n.add_argument("--bank", nargs="+", default=None)
    n.add_argument("--readout", choices=["fc", "convfc"], default=None)
    n.add_argument("--kernel", type=int, default=None, help="conv kernel length f")
    n.add_argument("--per-offset", action="store_true", help="also run each device alone")
    n.add_argument("--seed", type=int, default=None)
    n.add_argument("--out", default=None)
    n.set_defaults(func=cmd_neuro)

    m = sub.add_parser("simulate", help="drive one device with a waveform CSV (t_s,v_V)")
    common(m)
    m.add_argument("--waveform", required=True)
    m.add_argument("--method", choices=["euler", "rk4", "exact"], default="rk4")
    m.set_defaults(func=cmd_simulate)
    return ap


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.presets is None:
        args.presets = os.environ.get(PRESETS_ENV) or None
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    _LAST_OUT.clear()
    try:
        result = args.func(args)
    except ArithmeticError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    print(_dump(result), end="")
    if _LAST_OUT:
        _log(_LAST_OUT[0], argv, "ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
