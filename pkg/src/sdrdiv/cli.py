"""Command-line front end: ``sdrdiv <command> [flags]``.

Exit status is 0 on success, 1 on a usage error and 2 when a computation
fails (solver breakdown, or too little data for a slope fit).  Results go
to standard output or ``--out``; diagnostics go to standard error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys

import numpy as np

from . import __version__, diversity, sdp
from . import detectors as det
from .model import ChannelConfig, db_to_rho, synthesize
from .numerics import NumericalFailure, RngStream, mix64
from .sim import SweepConfig, diversity_from_curve, run_sweep, write_csv

EXIT_OK, EXIT_USAGE, EXIT_FAILURE = 0, 1, 2

SNR_HELP = ("SNR grid in dB as start:step:stop (stop included) or a comma list; "
            "the linear SNR is rho = 10^(dB/10) and the noise variance is 1/rho per "
            "real component (1/(2 rho) per part in the complex model)")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- flag parsing ----------------------------------------------------------------

def parse_grid(text: str) -> list[float]:
    """``"0:4:40"`` -> 0, 4, ..., 40; ``"1,10,100"`` -> that list."""
    try:
        if ":" in text:
            parts = [float(x) for x in text.split(":")]
            if len(parts) != 3:
                raise ValueError
            start, step, stop = parts
            if step <= 0 or stop < start:
                raise ValueError
            count = int(np.floor((stop - start) / step + 1e-9)) + 1
            return [round(start + k * step, 12) for k in range(count)]
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}; expected start:step:stop or a comma list") from None


def parse_list(text: str) -> list[float]:
    try:
        out = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad number list {text!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def parse_detectors(text: str) -> list[det.DetectorKind]:
    try:
        return [det.DetectorKind.parse(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def positive_int(text: str) -> int:
    try:
        v = int(float(text))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1 or v != float(text):
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return v


def seed_value(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed {text!r}") from None
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned value")
    return v


def _channel_flags(p, need_m=True):
    p.add_argument("--n", type=positive_int, required=True, help="receive dimension")
    if need_m:
        p.add_argument("--m", type=positive_int, required=True, help="transmit dimension")
    p.add_argument("--normalization", choices=("per-column", "unit-variance"), default="per-column",
                   help="entry variance 1/n (default) or 1")
    p.add_argument("--complex", action="store_true",
                   help="complex channel with 4-QAM symbols, solved in its real embedding")


def _common(p, seed_required=True):
    p.add_argument("--seed", type=seed_value, required=seed_required,
                   help="64-bit seed" + ("" if seed_required else " (accepted; this command draws nothing)"))
    p.add_argument("--out", help="write results to this file instead of standard output")
    p.add_argument("-v", "--verbose", action="store_true", help="progress on standard error")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sdrdiv", description="SDR detection and diversity experiments.")
    parser.add_argument("--version", action="version", version=f"sdrdiv {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="error-rate sweep over SNR",
                       description="Monte Carlo vector-error-rate sweep. " + SNR_HELP)
    _channel_flags(p)
    p.add_argument("--detectors", type=parse_detectors, default="ml,sdr-sign,mmse",
                   help="comma list of ml, zf, mmse, sdr-sign, sdr-eig, sdr-rand[:K]")
    p.add_argument("--snr-db", type=parse_grid, required=True, help=SNR_HELP)
    p.add_argument("--target-errors", type=positive_int, default=200)
    p.add_argument("--max-trials", type=positive_int, default=10 ** 6)
    p.add_argument("--sdp-tol", type=float, default=sdp.DEFAULT_TOL)
    p.add_argument("--workers", type=positive_int, default=1)
    p.add_argument("--bit-errors", action="store_true", help="append a bit_errors column")
    p.add_argument("--tail-points", type=positive_int, default=3,
                   help="points used for the slope lines in the trailer")
    _common(p)

    p = sub.add_parser("tau-scaling", help="tail of the separation statistic tau",
                       description="Empirical P(tau <= eps) over fresh channels and its slope in 1/eps.")
    _channel_flags(p)
    p.add_argument("--eps", type=parse_list, required=True, help="strictly decreasing comma list")
    p.add_argument("--trials", type=positive_int, required=True)
    _common(p)

    p = sub.add_parser("chi2-tail", help="small-ball probability of a chi-square variable",
                       description="Empirical P(||h||^2 <= rho^-c), h ~ N(0, I_d); slope in rho.")
    p.add_argument("--d", type=positive_int, required=True)
    p.add_argument("--c", type=float, required=True)
    p.add_argument("--rhos", type=parse_list, required=True, help="strictly increasing comma list")
    p.add_argument("--trials", type=positive_int, required=True)
    _common(p)

    p = sub.add_parser("fit", help="slope fit of a CSV written by this tool",
                       description="Fit log-log slopes to a simulate CSV (per detector, in rho) "
                                   "or to a tail CSV (in 1/epsilon).")
    p.add_argument("csv", help="input file")
    p.add_argument("--tail-points", type=positive_int, default=3)
    _common(p, seed_required=False)

    p = sub.add_parser("inspect", help="one instance through every detector",
                       description="Draw one instance and report every decision, the relaxation "
                                   "optimum, tau and the certificate as JSON. " + SNR_HELP)
    _channel_flags(p)
    p.add_argument("--snr-db", type=float, required=True)
    p.add_argument("--index", type=int, default=0, help="instance index within the seed")
    _common(p)

    p = sub.add_parser("rank-one", help="list the rank-one points of the tau slice")
    p.add_argument("--m", type=positive_int, required=True)
    _common(p, seed_required=False)
    return parser


# -- commands --------------------------------------------------------------------

def _provenance(args) -> list[str]:
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in ("out", "verbose")}
    shown = " ".join(f"{k}={_show(v)}" for k, v in flags.items())
    return [f"sdrdiv {__version__}", shown]


def _show(v):
    if isinstance(v, list):
        return ",".join(_show(x) for x in v)
    if isinstance(v, float):
        return f"{v:g}"
    return str(v)


def _channel(args) -> ChannelConfig:
    return ChannelConfig(args.n, args.m, normalization=args.normalization, complex=args.complex)


def cmd_simulate(args, out):
    cfg = SweepConfig(_channel(args), args.detectors, args.snr_db, max_trials=args.max_trials,
                      target_errors=args.target_errors, seed=args.seed, sdp_tol=args.sdp_tol)
    curve = run_sweep(cfg, workers=args.workers)
    write_csv(curve, out, _provenance(args), bit_errors=args.bit_errors)
    for kind in cfg.detectors:
        try:
            slope, stderr = diversity_from_curve(curve, kind, tail_points=max(2, args.tail_points))
            out.write(f"# slope[{kind}]={slope:.6g} stderr={stderr:.6g}\n")
        except diversity.InsufficientData:
            out.write(f"# slope[{kind}]=nan stderr=nan\n")
    return EXIT_OK


def _write_tail(report, out, header):
    for line in header:
        out.write(f"# {line}\n")
    out.write("epsilon,hits,trials,probability\n")
    for p in report.points:
        out.write(f"{p.threshold:.10g},{p.hits},{p.trials},{p.probability:.10g}\n")
    if report.failures:
        out.write(f"# failures={report.failures}\n")
    out.write(f"# slope={report.slope:.6g} stderr={report.stderr:.6g}\n")


def _tail_command(run, args, out):
    try:
        report = run()
    except diversity.InsufficientData as exc:
        if exc.report is not None:
            _write_tail(exc.report, out, _provenance(args))
        print(f"sdrdiv: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    _write_tail(report, out, _provenance(args))
    return EXIT_OK


def cmd_tau_scaling(args, out):
    stream = RngStream(args.seed, mix64(0x7A, args.n, args.m))
    return _tail_command(lambda: diversity.estimate_tau_tail(_channel(args), args.eps, args.trials, stream),
                         args, out)


def cmd_chi2_tail(args, out):
    stream = RngStream(args.seed, mix64(0xC2, args.d))
    return _tail_command(lambda: diversity.chi2_tail_check(args.d, args.c, args.rhos, args.trials, stream),
                         args, out)


def _read_rows(path):
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#") and ln.strip()]
    return list(csv.DictReader(lines))


def cmd_fit(args, out):
    try:
        rows = _read_rows(args.csv)
    except OSError as exc:
        raise UsageError(f"cannot read {args.csv}: {exc.strerror}") from None
    if not rows:
        raise UsageError(f"{args.csv}: no data rows")
    cols = set(rows[0])
    n = max(2, args.tail_points)
    status = EXIT_OK
    if {"snr_db", "detector", "errors", "ber"} <= cols:
        out.write("detector,slope,stderr,points\n")
        names = list(dict.fromkeys(r["detector"] for r in rows))
        for name in names:
            pts = sorted((float(r["snr_db"]), float(r["ber"])) for r in rows
                         if r["detector"] == name and int(r["errors"]) >= diversity.MIN_HITS)[-n:]
            try:
                slope, stderr = diversity.fit_slope([(float(db_to_rho(s)), p) for s, p in pts])
            except diversity.InsufficientData:
                slope = stderr = float("nan")
                status = EXIT_FAILURE
            out.write(f"{name},{slope:.6g},{stderr:.6g},{len(pts)}\n")
    elif {"epsilon", "hits", "probability"} <= cols:
        pts = [(1.0 / float(r["epsilon"]), float(r["probability"])) for r in rows
               if int(r["hits"]) >= diversity.MIN_HITS]
        try:
            slope, stderr = diversity.fit_slope(pts)
        except diversity.InsufficientData:
            slope = stderr = float("nan")
            status = EXIT_FAILURE
        out.write("slope,stderr,points\n")
        out.write(f"{slope:.6g},{stderr:.6g},{len(pts)}\n")
    else:
        raise UsageError(f"{args.csv}: unrecognised columns {sorted(cols)}")
    if status != EXIT_OK:
        print("sdrdiv: too few points with enough errors for a fit", file=sys.stderr)
    return status


def cmd_inspect(args, out):
    cfg = _channel(args)
    rho = float(db_to_rho(args.snr_db))
    stream = RngStream(args.seed, mix64(0x15, args.index))
    inst = synthesize(cfg, rho, stream)
    H, y = inst.H, inst.y
    report = {
        "version": __version__, "seed": args.seed, "index": args.index,
        "snr_db": args.snr_db, "rho": rho,
        "H": H.tolist(), "s": inst.s.tolist(), "v": inst.v.tolist(), "y": y.tolist(),
        "detections": {},
    }
    m = H.shape[1]
    if m <= det.ML_MAX_M:
        report["detections"]["ml"] = det.ml_detect(H, y).s_hat.tolist()
    try:
        report["detections"]["zf"] = det.zf_detect(H, y).s_hat.tolist()
    except det.SingularChannel:
        report["detections"]["zf"] = None
    report["detections"]["mmse"] = det.mmse_detect(H, y, rho).s_hat.tolist()
    sol = sdp.solve(sdp.UnitDiagSdp(sdp.build_lift(H, y)))
    if sol.status == sdp.NUMERICAL_FAILURE:
        raise NumericalFailure("relaxation solve failed")
    report["detections"]["sdr-sign"] = det.round_sign(sol.X).tolist()
    report["detections"]["sdr-eig"] = det.round_eig(sol.X).tolist()
    rand = det.round_random(sol.X, H, y, 10 * m, RngStream(args.seed, mix64(0x15, args.index, 1)))
    report["detections"]["sdr-rand"] = rand.tolist()
    report["sdp"] = {"objective": sol.objective, "gap": sol.gap, "iterations": sol.iterations,
                     "status": sol.status, "rank": sdp.numerical_rank(sol.X), "X": sol.X.tolist()}
    if m >= 2:
        # the certificate concerns s = e; flipping the columns of H maps s to e
        He = H * inst.s
        tau = diversity.compute_tau(He)
        certified, _, energy = diversity.lemma1_certificate(He, inst.v, tau=tau.tau)
        report["tau"] = {"tau": tau.tau, "status": tau.status, "noise_energy": energy,
                         "certified": certified}
        if m <= diversity.RANK_ONE_MAX_M:
            report["tau"]["tau_rank_one"] = diversity.tau_rank_one(He)
    json.dump(report, out, indent=2, default=float)
    out.write("\n")
    return EXIT_OK


def cmd_rank_one(args, out):
    if not 2 <= args.m <= diversity.RANK_ONE_MAX_M:
        raise UsageError(f"--m must lie in [2, {diversity.RANK_ONE_MAX_M}]")
    mats = diversity.enumerate_rank_one(args.m)
    out.write(f"{len(mats)}\n")
    for Y in mats:
        out.write("\n")
        for row in Y:
            out.write(" ".join(f"{x + 0.0:.6g}" for x in row) + "\n")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate, "tau-scaling": cmd_tau_scaling, "chi2-tail": cmd_chi2_tail,
    "fit": cmd_fit, "inspect": cmd_inspect, "rank-one": cmd_rank_one,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help and --version
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        return COMMANDS[args.command](args, out)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"sdrdiv: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalFailure, np.linalg.LinAlgError) as exc:
        print(f"sdrdiv: numerical failure: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    finally:
        if args.out:
            out.close()


if __name__ == "__main__":
    sys.exit(main())
