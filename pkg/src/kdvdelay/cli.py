"""Command-line entry point.

Subcommands ``certify``, ``optimize``, ``simulate``, ``compare-channels`` and
``sweep`` share ``--config``, ``--out``, ``--override`` and ``--resolution``.
Exit status: 0 success, 1 infeasible configuration or failed bound,
2 configuration error.
"""
from __future__ import annotations

import argparse
import itertools
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .analyze import (AnalysisError, fit_decay_rate, kato_smoothing_report, verify_bound)
from .certify import (InfeasibleError, build_certificate, mu1_upper_bound, mu2_of_mu1,
                      optimize_mu1, rate_f, rate_g)
from .config import (RESOLUTIONS, ConfigError, build_certificate_from, build_profile,
                     build_simulation, dumps, file_digest, load_config, parse_override, resolve,
                     sweep_axes, validate_keys)
from .exports import (format_kv, read_manifest_config, write_figure1_script, write_kv,
                      write_manifest, write_plot_data, write_record_csv, write_snapshot)
from .model import SQRT3_PI, ConfigurationError, check_gain_feasibility, validate_delay_profile
from .simulate import SolverError, driven_channel_difference, run_simulation

log = logging.getLogger("kdvdelay")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class _Context:
    def __init__(self, args, cfg):
        self.args = args
        self.cfg = cfg
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.outputs: list[Path] = []
        self.inputs: dict = {}
        if args.config:
            self.inputs[str(args.config)] = file_digest(args.config)
        tab = cfg["delay"]["file"]
        if cfg["delay"]["kind"] == "tabulated" and tab:
            p = Path(tab) if Path(tab).is_absolute() else self.base_dir / tab
            self.inputs[str(p)] = file_digest(p)

    @property
    def base_dir(self) -> Path:
        return Path(self.args.config).parent if self.args.config else Path.cwd()

    def add(self, path: Path) -> Path:
        self.outputs.append(path)
        return path

    def finish(self, command: str) -> None:
        write_manifest(self.out / "manifest.json", self.cfg, self.outputs, command, self.inputs)


def _emit(title: str, values: dict) -> None:
    print(f"[{title}]")
    print(format_kv(values), end="")


def _load(args) -> dict:
    path = args.config
    if path and str(path).endswith(".json"):
        raw = read_manifest_config(path)
        data = {s: {k: v for k, v in body.items() if v is not None} for s, body in raw.items()}
        validate_keys(data)
        for item in args.override:
            section, key, value = parse_override(item)
            data.setdefault(section, {})[key] = value
        if args.resolution:
            if args.resolution not in RESOLUTIONS:
                raise ConfigError(f"unknown resolution preset {args.resolution!r}")
            data["grid"].update(RESOLUTIONS[args.resolution])
        return resolve(data)
    return load_config(path, args.override, args.resolution)


# certify --------------------------------------------------------------------
def cmd_certify(ctx: _Context) -> int:
    cfg = ctx.cfg
    profile = build_profile(cfg, ctx.base_dir)
    L = float(cfg["domain"]["L"])
    if not 0 < L < SQRT3_PI:
        raise InfeasibleError(f"L outside certified range (0, sqrt(3) pi): L={L}")
    report = validate_delay_profile(profile, float(cfg["time"]["horizon"]))
    cert = build_certificate_from(cfg, profile)
    values = {"L": L, "alpha": cert.alpha, "beta": cert.beta, "d": cert.d, "M": cert.M,
              **cert.as_dict(), "delay_bounds_valid": report.passed,
              "branch": "no-delay (mu2 = 0, lambda from f)" if cert.beta == 0 else "delay"}
    for i, msg in enumerate(cert.diagnostics):
        values[f"diagnostic.{i}"] = msg
    for i, msg in enumerate(report.violations):
        values[f"delay_violation.{i}"] = msg
    _emit("certificate", values)
    ctx.add(write_kv(values, ctx.out / "certificate.txt", "certificate"))
    ctx.finish("certify")
    return EXIT_OK if cert.feasible and report.passed else EXIT_FAIL


# optimize -------------------------------------------------------------------
def figure1_table(alpha, beta, d, L, M, points):
    """``(mu1, f, g, min(f, g))`` sampled on ``[0, mu1_upper_bound]``."""
    upper = mu1_upper_bound(alpha, beta, d, L)
    mu = np.linspace(0.0, upper, points)
    f = np.array([rate_f(m, L, "proposition") for m in mu])
    g = np.array([rate_g(m, alpha, beta, d, L, M) for m in mu])
    return mu, f, g, np.minimum(f, g)


def cmd_optimize(ctx: _Context) -> int:
    cfg = ctx.cfg
    profile = build_profile(cfg, ctx.base_dir)
    al, be = float(cfg["gains"]["alpha"]), float(cfg["gains"]["beta"])
    L = float(cfg["domain"]["L"])
    if be == 0:
        raise InfeasibleError("optimizer requires beta != 0 (g undefined); use certify")
    points = int(cfg["optimize"]["points"])
    if points < 2:
        raise ConfigError("optimize.points must be >= 2")
    mu1, lam = optimize_mu1(al, be, profile.d, L, profile.M, float(cfg["optimize"]["tol"]))
    cert = build_certificate(al, be, profile.d, L, profile.M, mu1, mu2_of_mu1(al, be, profile.d, L, mu1))
    mu, f, g, m = figure1_table(al, be, profile.d, L, profile.M, points)
    data = ctx.add(write_plot_data(ctx.out / "figure1.dat", {"mu1": mu, "f": f, "g": g, "min": m},
                                   comment=f"alpha={al} beta={be} d={profile.d} L={L} M={profile.M}"))
    ctx.add(write_figure1_script(ctx.out / "figure1.gp", data.name, (mu1, lam)))
    values = {"mu1_star": mu1, "lambda_star": lam, "f_minus_g": rate_f(mu1, L) - rate_g(mu1, al, be, profile.d, L, profile.M),
              "mu1_upper": mu1_upper_bound(al, be, profile.d, L), "points": points, **cert.as_dict()}
    _emit("optimum", values)
    ctx.add(write_kv(values, ctx.out / "optimum.txt", "optimum"))
    ctx.finish("optimize")
    return EXIT_OK if cert.feasible else EXIT_FAIL


# simulate -------------------------------------------------------------------
def _certificate_or_none(cfg, profile):
    g = cfg["gains"]
    if float(g["alpha"]) == 0 and float(g["beta"]) == 0:
        return None, "conservative gains: no decay certificate"
    try:
        return build_certificate_from(cfg, profile), ""
    except InfeasibleError as exc:
        return None, str(exc)


def cmd_simulate(ctx: _Context) -> int:
    cfg = ctx.cfg
    profile = build_profile(cfg, ctx.base_dir)
    cert, why = _certificate_or_none(cfg, profile)
    sim = build_simulation(cfg, cert, ctx.base_dir)
    kato_T = float(cfg["analysis"]["kato_T"])
    if kato_T > 0 and sim.snapshot_every is None:
        sim = replace(sim, snapshot_every=sim.scheme.step)
    record = run_simulation(sim)
    ctx.add(write_record_csv(record, ctx.out / "record.csv"))
    if sim.snapshot_every:
        for name, arr in (("eta", record.snap_eta), ("omega", record.snap_omega), ("z", record.snap_z)):
            ctx.add(write_snapshot(ctx.out / f"snapshot_{name}.txt", record.snap_t, arr, sim.L))

    values = {"label": "conservative" if sim.gains.conservative else "feedback",
              "steps": record.metadata["steps"], "dt": record.metadata["dt"],
              "E0": record.E[0], "E_final": record.E[-1],
              "no_delay_channel": record.metadata["no_delay_channel"],
              "ic_projected": record.metadata["ic_projected"]}
    status = EXIT_OK
    try:
        if sim.gains.conservative:
            raise AnalysisError("conservative gains: energy is conserved, no decay to fit")
        fit = fit_decay_rate(record, float(cfg["analysis"]["window"]))
        values.update({"lambda_fit": fit.lambda_fit, "fit_t_a": fit.t_a, "fit_t_b": fit.t_b,
                       "fit_residual": fit.residual})
    except AnalysisError as exc:
        values["lambda_fit"] = "n/a"
        values["fit_note"] = str(exc)
    if cert is None:
        values["certificate"] = "none"
        values["certificate_note"] = why
        if not sim.gains.conservative:
            status = EXIT_FAIL
    else:
        rep = verify_bound(record, cert, float(cfg["analysis"]["slack"]))
        values.update({f"cert.{k}": v for k, v in cert.as_dict().items()})
        values.update({f"bound.{k}": v for k, v in rep.as_dict().items()})
        if isinstance(values.get("lambda_fit"), float):
            values["lambda_fit_ge_lambda"] = values["lambda_fit"] >= cert.lam
        if not (rep.passed and cert.feasible):
            status = EXIT_FAIL
    if kato_T > 0:
        kr = kato_smoothing_report(record, kato_T)
        values.update({"kato.T": kr.T, "kato.ratio": kr.ratio, "kato.lhs": kr.lhs, "kato.rhs": kr.rhs,
                       "kato.constant": kr.constant, "kato.vacuous": kr.vacuous})
        if kr.note:
            values["kato.note"] = kr.note
    for key in ("picard_max", "picard_mean"):
        if key in record.metadata:
            values[key] = record.metadata[key]
    _emit("simulation", values)
    ctx.add(write_kv(values, ctx.out / "report.txt", "simulation-report"))
    ctx.finish("simulate")
    return status


# compare-channels -----------------------------------------------------------
def cmd_compare_channels(ctx: _Context) -> int:
    cfg = ctx.cfg
    profile = build_profile(cfg, ctx.base_dir)
    base = build_simulation(cfg, None, ctx.base_dir)
    runs = {}
    for ch in ("transport", "history"):
        runs[ch] = run_simulation(replace(base, scheme=replace(base.scheme, delay_channel=ch)))
    rt, rh = runs["transport"], runs["history"]
    scale = max(np.abs(rh.z1).max(), np.abs(rt.z1).max())
    dz = np.abs(rt.z1 - rh.z1)
    dE = np.abs(rt.E - rh.E)
    values = {"nrho": base.nrho, "dt": rt.metadata["dt"],
              "trace_sup_abs": dz.max(), "trace_sup_rel": dz.max() / scale if scale > 0 else 0.0,
              "energy_sup_abs": dE.max(),
              "energy_sup_rel": dE.max() / rt.E[0] if rt.E[0] > 0 else 0.0}
    # identical-input check: the same smooth trace drives both channels
    drv = driven_channel_difference(profile, np.sin, base.nrho, base.scheme.step,
                                    min(base.scheme.horizon, 20.0 * profile.M),
                                    base.scheme.theta, base.scheme.transport_dissipation)
    values.update({"driven.signal": "sin(t)", "driven.sup_rel": drv.max_rel,
                   "driven.transport_error": drv.transport_error,
                   "driven.history_error": drv.history_error})
    ctx.add(write_plot_data(ctx.out / "channels.dat",
                            {"t": rt.t, "z1_transport": rt.z1, "z1_history": rh.z1,
                             "E_transport": rt.E, "E_history": rh.E}))
    _emit("channels", values)
    ctx.add(write_kv(values, ctx.out / "channels.txt", "channel-report"))
    ctx.finish("compare-channels")
    return EXIT_OK


# sweep ----------------------------------------------------------------------
SWEEP_COLUMNS = ("alpha", "beta", "d", "L", "feasible", "lambda", "zeta", "mu1", "mu2", "lambda_fit")


def _sweep_point(args):
    cfg, point = args
    al, be, d, L = point
    row = {"alpha": al, "beta": be, "d": d, "L": L, "feasible": False, "lambda": np.nan,
           "zeta": np.nan, "mu1": np.nan, "mu2": np.nan, "lambda_fit": np.nan}
    if not (0 <= d < 1) or al < 0 or not L > 0:
        return row
    row["feasible"] = bool(check_gain_feasibility(al, be, d)) and L < SQRT3_PI
    if not row["feasible"]:
        return row
    local = {s: dict(b) for s, b in cfg.items()}
    local["gains"].update(alpha=al, beta=be)
    local["domain"]["L"] = L
    local["delay"]["d"] = d
    profile = build_profile(local)
    try:
        cert = build_certificate_from(local, profile)
    except (InfeasibleError, ConfigurationError):
        row["feasible"] = False
        return row
    row.update({"lambda": cert.lam, "zeta": cert.zeta, "mu1": cert.mu1, "mu2": cert.mu2,
                "feasible": cert.feasible})
    H = float(cfg["sweep"]["fit_horizon"])
    if H > 0:
        local["time"]["horizon"] = H
        rec = run_simulation(build_simulation(local, None))
        try:
            row["lambda_fit"] = fit_decay_rate(rec, float(cfg["analysis"]["window"])).lambda_fit
        except AnalysisError:
            pass
    return row


def sweep_points(cfg: dict) -> list[tuple]:
    axes = {a.name: a.values for a in sweep_axes(cfg)}
    base = (float(cfg["gains"]["alpha"]), float(cfg["gains"]["beta"]),
            float(cfg["delay"]["d"]), float(cfg["domain"]["L"]))
    names = ("alpha", "beta", "d", "L")
    ranges = [axes.get(n, (base[i],)) for i, n in enumerate(names)]
    size = int(np.prod([len(r) for r in ranges]))
    cap = int(cfg["sweep"]["cap"])
    if size > cap:
        raise ConfigError(f"sweep size {size} exceeds cap {cap}")
    return sorted(itertools.product(*ranges))


def run_sweep(cfg: dict, workers: int | None = None) -> list[dict]:
    points = sweep_points(cfg)
    if workers is None:
        workers = int(cfg["sweep"]["workers"]) or min(4, os.cpu_count() or 1)
    jobs = [(cfg, p) for p in points]
    if workers <= 1 or len(jobs) <= 1:
        return [_sweep_point(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map keeps input order, so the output order is the sorted parameter order
        return list(pool.map(_sweep_point, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def cmd_sweep(ctx: _Context) -> int:
    rows = run_sweep(ctx.cfg)
    path = ctx.out / "sweep.csv"
    with open(path, "w", newline="\n") as fh:
        fh.write("# kdvdelay sweep v1\n")
        fh.write(",".join(SWEEP_COLUMNS) + "\n")
        for r in rows:
            fh.write(",".join(("true" if r[c] else "false") if c == "feasible" else "%.17g" % r[c]
                              for c in SWEEP_COLUMNS) + "\n")
    ctx.add(path)
    _emit("sweep", {"points": len(rows), "feasible": sum(r["feasible"] for r in rows), "table": str(path)})
    ctx.finish("sweep")
    return EXIT_OK


COMMANDS = {
    "certify": cmd_certify,
    "optimize": cmd_optimize,
    "simulate": cmd_simulate,
    "compare-channels": cmd_compare_channels,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kdvdelay", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML configuration (or a manifest.json to rerun)")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration key, e.g. gains.alpha=1.5 (repeatable)")
    common.add_argument("--resolution", help="grid preset: coarse, reference or double")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load(args)
        ctx = _Context(args, cfg)
        if args.verbose:
            log.info("resolved configuration:\n%s", dumps(cfg))
        return COMMANDS[args.command](ctx)
    except InfeasibleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (ConfigurationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
