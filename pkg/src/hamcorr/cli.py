"""Command-line interface: simulate, gen-data, fit, eval, export.

Exit codes: 0 success, 2 usage, 3 data error, 4 numerical failure.
"""
import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import dataio
from .errors import DataError, HamcorrError, InvalidParameterError, NumericalError
from .hamiltonian import (DEFAULT_ABS_TOL, DEFAULT_FRAME, DEFAULT_REL_TOL, TERMS, CorrectionSet,
                          ModelContext)
from .model import STATE_LABELS, PreparedModel, point_losses, simulate_points
from .pulses import DEFAULT_RISEFALL_DT, DEFAULT_SIGMA_DT, duration_ladder
from .training import FitConfig, fit, parse_terms

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


class UsageError(HamcorrError):
    pass


# --- argument helpers ---------------------------------------------------------


def _parse_pair(text):
    if text == "all":
        return "all"
    try:
        a1, a2 = (float(x) for x in text.split(","))
    except ValueError:
        raise UsageError(f"--pair expects A1,A2 or 'all', got {text!r}") from None
    return (a1, a2)


def _parse_floats(text, n, flag):
    try:
        vals = tuple(float(x) for x in text.split(","))
    except ValueError:
        vals = ()
    if len(vals) != n:
        raise UsageError(f"{flag} expects {n} comma-separated numbers, got {text!r}")
    return vals


def _context(params, args):
    return ModelContext(params, frame=args.frame, rel_tol=args.rtol, abs_tol=args.atol)


def _select_pairs(dataset, selector):
    if selector == "all":
        return dataset.pairs()
    dataset.points_for(selector)
    return [selector]


def _workers(args):
    return args.workers if args.workers else (os.cpu_count() or 1)


class _Point:
    """Unlabelled point used by ``simulate``."""

    def __init__(self, a1, a2, duration, state, normalized=False):
        self.amplitude_target = a1
        self.amplitude_control = a2
        self.total_duration_dt = duration
        self.initial_state = state
        self.probs = (0.0,) * 4
        self.normalized = normalized


def _fit_lookup(results, pair):
    for r in results:
        if r.pair is not None and np.allclose(r.pair, pair, rtol=0, atol=1e-12):
            return r
    return None


# --- subcommands ------------------------------------------------------------------


def cmd_simulate(args):
    params = dataio.load_device_params(args.device)
    ctx = _context(params, args)
    q1, q2 = (_parse_floats(args.drive_freqs, 2, "--drive-freqs") if args.drive_freqs
              else (params.omega2, params.omega2))
    a1, a2 = _parse_floats(args.amplitudes, 2, "--amplitudes")
    durations = duration_ladder(args.count)
    points = [_Point(a1, a2, d, args.state) for d in durations]
    zero = CorrectionSet.zeros(params.levels ** 2, active=(False, False, False))
    model = PreparedModel(ctx, q1, q2, DEFAULT_RISEFALL_DT, DEFAULT_SIGMA_DT,
                          active=(False, False, False), chunk_size=len(points))
    _, probs_unc = simulate_points(model, zero, points)
    survival = STATE_LABELS.index(args.state)
    header = ["duration_dt", "duration_ns", "survival_uncorrected"]
    columns = [probs_unc[:, survival]]
    if args.fit:
        results, _ = dataio.load_fit_results(args.fit)
        result = _fit_lookup(results, (a1, a2)) if len(results) > 1 else results[0]
        if result is None:
            raise DataError(f"{args.fit} has no fit for amplitudes {(a1, a2)}")
        corr = result.corrections
        if corr.dim != ctx.dim:
            raise DataError(f"fit matrices are {corr.dim}x{corr.dim}, device needs {ctx.dim}")
        cmodel = PreparedModel(ctx, q1, q2, active=corr.active,
                               modulation_freq=corr.modulation_freq, chunk_size=len(points))
        _, probs_cor = simulate_points(cmodel, corr, points)
        header.append("survival_corrected")
        columns.append(probs_cor[:, survival])
    rows = [header]
    for k, d in enumerate(durations):
        rows.append([str(d), repr(d * params.dt_ns)] + [repr(float(c[k])) for c in columns])
    dataio.atomic_write_text(args.out, dataio._csv_text(rows))
    print(f"wrote {len(durations)} durations to {args.out}")


def _load_plant(path, dim):
    if path is None:
        return CorrectionSet.zeros(dim, active=(False, False, True))
    data = dataio._read_json(path)
    if isinstance(data, dict) and data.get("format") == dataio.FIT_FORMAT:
        results, _ = dataio.load_fit_results(path)
        corr = results[0].corrections
    else:
        corr = dataio.corrections_from_dict(data, where=str(path))
    if corr.dim != dim:
        raise DataError(f"planted matrices are {corr.dim}x{corr.dim}, device needs {dim}")
    return corr


def cmd_gen_data(args):
    params = dataio.load_device_params(args.device)
    ctx = _context(params, args)
    if not args.standard_grid:
        raise UsageError("gen-data needs --standard-grid (the only built-in grid)")
    grid = dataio.standard_grid()
    if args.pair != "all":
        grid = [g for g in grid if np.allclose(g.pair, args.pair, rtol=0, atol=1e-12)]
        if not grid:
            raise DataError(f"pair {args.pair} is not on the standard grid")
    drives = (_parse_floats(args.drive_freqs, 2, "--drive-freqs") if args.drive_freqs
              else None)
    planted = _load_plant(args.plant, ctx.dim)
    ds = dataio.generate_synthetic(ctx, planted, grid=grid, shots=args.shots, seed=args.seed,
                                   normalized=args.normalized, drive_freqs=drives,
                                   workers=_workers(args))
    dataio.save_dataset(ds, args.out)
    print(f"wrote {len(ds.points)} points for {len(grid)} pairs to {args.out}")


def _fit_one(job):
    dataset_path, pair, config, frame, rtol, atol, chunk = job
    ds = dataio.load_dataset(dataset_path)
    ctx = ModelContext(ds.device_params, frame=frame, rel_tol=rtol, abs_tol=atol)
    model = ds.prepared_model(ctx, active=config.active_terms,
                              complex_params=config.complex_params, chunk_size=chunk)
    train, _ = dataio.split(ds, pair)
    label = f"pair ({pair[0]:g}, {pair[1]:g})"

    def progress(it, value):
        if it % max(1, config.log_every) == 0:
            print(f"{label} iteration {it} loss {value:.6g} average {value / len(train):.5f}",
                  file=sys.stderr, flush=True)

    result = fit(train, config, model, callback=progress)
    result.pair = tuple(pair)
    print(f"{label} done: {result.iterations_used} iterations, "
          f"average training loss {result.average_loss:.5f}", file=sys.stderr, flush=True)
    return result


def run_fit(dataset_path, out_path, pair="all", config=None, frame=DEFAULT_FRAME,
            rtol=DEFAULT_REL_TOL, atol=DEFAULT_ABS_TOL, workers=1, chunk_size=40):
    """Fit every requested amplitude pair independently and write one result file."""
    config = config or FitConfig()
    ds = dataio.load_dataset(dataset_path)
    pairs = _select_pairs(ds, pair)
    jobs = [(str(dataset_path), p, config, frame, rtol, atol, chunk_size) for p in pairs]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_fit_one, jobs))
    else:
        results = [_fit_one(job) for job in jobs]
    info = {"dataset_digest": dataio.dataset_digest(ds), "frame": frame,
            "rel_tol": rtol, "abs_tol": atol}
    dataio.save_fit_results(results, out_path, info)
    return results


def _config_from_args(args):
    return FitConfig(
        learning_rate=args.lr, momentum=args.momentum, max_iterations=args.iters,
        loss_threshold=None if args.tol is None else args.tol,
        active_terms=parse_terms(args.terms), seed=args.seed, init_scale=args.init_scale,
        complex_params=args.complex, log_every=args.log_every, lr_decay=args.lr_decay,
    )


def cmd_fit(args):
    config = _config_from_args(args)
    results = run_fit(args.dataset, args.out, args.pair, config, args.frame, args.rtol,
                      args.atol, _workers(args))
    print(f"wrote {len(results)} fit results to {args.out}")


def evaluate_pair(ds, ctx, pair, result):
    """Per-point losses with and without corrections, tagged by split and state.

    Losses come from the same routine the optimiser uses, evaluated separately
    on the training and validation slices, so the uncorrected training loss
    equals the fit's loss at p = 0.
    """
    train, validation = dataio.split(ds, pair)
    corr = result.corrections
    complex_params = bool(result.config.complex_params) if result.config else False
    model = ds.prepared_model(ctx, active=corr.active, modulation_freq=corr.modulation_freq,
                              complex_params=complex_params)
    p_fit = np.asarray(result.params, dtype=float)
    if p_fit.shape != (model.n_params,):
        raise DataError(f"fit parameter vector has {p_fit.size} entries, "
                        f"dataset device needs {model.n_params}")
    p_zero = np.zeros(model.n_params)
    rows = [(p, "train") for p in train] + [(p, "validation") for p in validation]
    loss_unc = np.concatenate([point_losses(model, p_zero, train),
                               point_losses(model, p_zero, validation)])
    loss_cor = np.concatenate([point_losses(model, p_fit, train),
                               point_losses(model, p_fit, validation)])
    points = [p for p, _ in rows]
    _, p_unc = simulate_points(model, model.corrections(p_zero), points)
    _, p_cor = simulate_points(model, model.corrections(p_fit), points)
    data = np.array([p.probs for p in points])
    return rows, data, p_unc, p_cor, loss_unc, loss_cor


def cmd_eval(args):
    ds = dataio.load_dataset(args.dataset)
    results, doc = dataio.load_fit_results(args.fit)
    frame = args.frame or doc.get("frame", DEFAULT_FRAME)
    ctx = ModelContext(ds.device_params, frame=frame, rel_tol=args.rtol, abs_tol=args.atol)
    out = Path(args.out)
    evaluations = []
    state_rows = [["T_amp", "C_amp", "initial_state", "split", "n_points",
                   "loss_uncorrected", "loss_corrected"]]
    series_rows = [["T_amp", "C_amp", "initial_state", "split", "duration_dt"]
                   + [f"{kind}_{s}" for kind in ("data", "uncorrected", "corrected")
                      for s in STATE_LABELS]]
    for result in results:
        if result.corrections.dim != ctx.dim:
            raise DataError(f"fit matrices are {result.corrections.dim}x"
                            f"{result.corrections.dim}, dataset device needs {ctx.dim}")
        if result.pair is None:
            raise DataError("fit result has no amplitude pair")
        pair = result.pair
        rows, data, p_unc, p_cor, l_unc, l_cor = evaluate_pair(ds, ctx, pair, result)
        splits = np.array([s for _, s in rows])
        states = np.array([p.initial_state for p, _ in rows])
        val = splits == "validation"
        evaluations.append(dataio.PairEvaluation(
            pair[0], pair[1], float(l_unc[val].mean()), float(l_cor[val].mean()),
            int(val.sum()), result.corrections.D2))
        for state in STATE_LABELS:
            for split_name in ("train", "validation"):
                sel = (states == state) & (splits == split_name)
                if sel.any():
                    state_rows.append([repr(pair[0]), repr(pair[1]), state, split_name,
                                       str(int(sel.sum())), repr(float(l_unc[sel].mean())),
                                       repr(float(l_cor[sel].mean()))])
        for k, (p, split_name) in enumerate(rows):
            series_rows.append([repr(pair[0]), repr(pair[1]), p.initial_state, split_name,
                                str(p.total_duration_dt)]
                               + [repr(float(x)) for x in (*data[k], *p_unc[k], *p_cor[k])])
        for name, active in zip(TERMS, result.corrections.active):
            if active:
                dataio.export_heatmap(result.corrections.matrices[name],
                                      out / f"heatmap_{name}_{pair[0]:g}_{pair[1]:g}.csv")
    levels = ds.device_params.levels
    dataio.export_loss_table(evaluations, out / "loss_table.csv",
                             trend_path=out / "d2_trends.csv", levels=levels)
    dataio.atomic_write_text(out / "state_losses.csv", dataio._csv_text(state_rows))
    dataio.atomic_write_text(out / "timeseries.csv", dataio._csv_text(series_rows))
    summary = {"evaluations": [
        {"T_amp": e.amplitude_target, "C_amp": e.amplitude_control,
         "loss_uncorrected": e.loss_uncorrected, "loss_corrected": e.loss_corrected,
         "n_points": e.n_points} for e in evaluations]}
    dataio.atomic_write_text(out / "eval.json", json.dumps(summary, indent=1) + "\n")
    for e in evaluations:
        print(f"({e.amplitude_target:g}, {e.amplitude_control:g}) validation average loss "
              f"uncorrected {e.loss_uncorrected:.4f} corrected {e.loss_corrected:.4f}")


def cmd_export(args):
    out = Path(args.out)
    results, _ = dataio.load_fit_results(args.fit)
    written = []
    for r in results:
        tag = f"{r.pair[0]:g}_{r.pair[1]:g}" if r.pair is not None else "fit"
        for name, active in zip(TERMS, r.corrections.active):
            if active:
                written += dataio.export_heatmap(r.corrections.matrices[name],
                                                 out / f"heatmap_{name}_{tag}.csv")
    if args.eval:
        summary = dataio._read_json(args.eval)
        by_pair = {tuple(r.pair): r for r in results if r.pair is not None}
        evaluations = []
        for e in summary.get("evaluations", []):
            key = (e["T_amp"], e["C_amp"])
            fitted = by_pair.get(key)
            evaluations.append(dataio.PairEvaluation(
                e["T_amp"], e["C_amp"], e["loss_uncorrected"], e["loss_corrected"],
                e.get("n_points", 0), fitted.corrections.D2 if fitted else None))
        levels = int(round(np.sqrt(results[0].corrections.dim))) if results else 3
        written += dataio.export_loss_table(evaluations, out / "loss_table.csv",
                                            trend_path=out / "d2_trends.csv",
                                            reduced_table=args.reduced_table, levels=levels)
    print(f"wrote {len(written)} files to {out}")


# --- parser ------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="hamcorr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def numerics(p, frame_default=DEFAULT_FRAME):
        p.add_argument("--frame", choices=("lab", "rotating"), default=frame_default)
        p.add_argument("--rtol", type=float, default=DEFAULT_REL_TOL)
        p.add_argument("--atol", type=float, default=DEFAULT_ABS_TOL)

    p = sub.add_parser("simulate", help="survival probability over a duration ladder")
    p.add_argument("--device", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--amplitudes", default="0.0,0.4", help="A1,A2")
    p.add_argument("--state", choices=STATE_LABELS, default="00")
    p.add_argument("--count", type=int, default=20, help="ladder length")
    p.add_argument("--drive-freqs", help="w_d1,w_d2 in rad/ns (default: omega2 for both)")
    p.add_argument("--fit", help="fit result file whose corrections are simulated as well")
    numerics(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("gen-data", help="synthetic dataset from a planted correction")
    p.add_argument("--device", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--standard-grid", action="store_true")
    p.add_argument("--pair", type=_parse_pair_arg, default="all")
    p.add_argument("--plant", help="JSON with correction matrices (or a fit result file)")
    p.add_argument("--shots", type=int)
    p.add_argument("--normalized", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--drive-freqs")
    p.add_argument("--workers", type=int, default=0)
    numerics(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("fit", help="fit corrections per amplitude pair")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pair", type=_parse_pair_arg, default="all")
    p.add_argument("--terms", default="d2", help="m, d1, d2, all, or a comma list")
    p.add_argument("--lr", type=float, default=FitConfig.learning_rate)
    p.add_argument("--momentum", type=float, default=FitConfig.momentum)
    p.add_argument("--lr-decay", type=float, default=FitConfig.lr_decay,
                   help="per-iteration factor on the learning rate (1 = constant)")
    p.add_argument("--iters", type=int, default=FitConfig.max_iterations)
    p.add_argument("--tol", type=float, default=None,
                   help="stop when the summed training loss reaches this (default 0.02 per point)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init-scale", type=float, default=0.0)
    p.add_argument("--complex", action="store_true", help="complex-valued corrections")
    p.add_argument("--log-every", type=int, default=10)
    p.add_argument("--workers", type=int, default=0, help="parallel pairs (default: all cores)")
    numerics(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="loss table, heatmaps and time series for a fit")
    p.add_argument("--dataset", required=True)
    p.add_argument("--fit", required=True)
    p.add_argument("--out", required=True, help="output directory")
    numerics(p, frame_default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", help="heatmaps and loss table from saved results")
    p.add_argument("--fit", required=True)
    p.add_argument("--eval", help="eval.json written by the eval command")
    p.add_argument("--reduced-table", action="store_true",
                   help="leave out rows (0.03, 0.3) and (0.04, 0.3)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_export)
    return parser


def _parse_pair_arg(text):
    try:
        return _parse_pair(text)
    except UsageError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (UsageError, InvalidParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, OSError, HamcorrError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
