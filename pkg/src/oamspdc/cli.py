"""Command-line entry point.

Subcommands:
    spectrum   mode-coupling weight table for the configured pump
    stats      pump photon-number statistics report
    simulate   synthetic timestamp streams (single setting or projection scan)
    analyze    histograms and correlation matrices from tag files
    compare    Pearson coefficient and per-cell deltas of two matrices

Every run writes a run manifest with the canonical config hash; outputs are
staged in a temporary directory and moved into place only when the whole
command succeeded, so failures leave no partial artifacts.

Exit codes: 0 success, 2 configuration error, 3 numerical error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
import tempfile

from . import __version__, config as cfgmod
from .analysis import (
    CorrelationMatrix,
    accidental_rate,
    build_matrix,
    count_coincidences,
    cross_histogram,
    diagonal_fraction,
    heralded_coincidences,
    matched_pair_times,
    pearson,
)
from .errors import ConfigError, NumericalError, OamSpdcError, TagStreamError
from .montecarlo import run_projection_scan, simulate
from .statistics import (
    alpha_from_drive,
    apply_loss,
    calibrate_kappa,
    multipair_ratio,
    pn_tmsv,
)
from .streams import SettingStreams, merge_streams
from .tagstream import parse_tags, write_tags
from .units import parse_quantity

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


class _Staging:
    """Collects output files in a temp dir; publishes them only on success."""

    def __init__(self, out_dir):
        self.out_dir = out_dir
        self.tmp = tempfile.mkdtemp(prefix=".stage-", dir=out_dir)
        self.files = []

    def path(self, name):
        self.files.append(name)
        full = os.path.join(self.tmp, name)
        if os.path.dirname(name):
            os.makedirs(os.path.dirname(full), exist_ok=True)
        return full

    def publish(self):
        published = []
        for name in self.files:
            dest = os.path.join(self.out_dir, name)
            if os.path.dirname(name):
                os.makedirs(os.path.join(self.out_dir, os.path.dirname(name)), exist_ok=True)
            os.replace(os.path.join(self.tmp, name), dest)
            published.append(dest)
        shutil.rmtree(self.tmp, ignore_errors=True)
        return published

    def discard(self):
        shutil.rmtree(self.tmp, ignore_errors=True)


def _json_dump(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_manifest(stage, command, tree, seed, artifacts):
    manifest = {
        "tool_version": __version__,
        "command": command,
        "config_hash": cfgmod.config_hash(tree),
        "seed": seed,
        "artifacts": sorted(artifacts),
    }
    _json_dump(stage.path("run_manifest.json"), manifest)
    return manifest


def _load_tree(args):
    if args.config:
        tree = cfgmod.load_config(args.config)
        tree = cfgmod.merge_trees(cfgmod.default_config(), tree)
    else:
        tree = cfgmod.default_config()
    tree = cfgmod.apply_overrides(tree, args.set or [])
    if args.seed is not None:
        tree.setdefault("experiment", {})["seed"] = args.seed
    return tree


def cmd_spectrum(args):
    tree = _load_tree(args)
    exp = cfgmod.experiment_from_tree(tree)
    table = exp.second_source.weights
    stage = _Staging(args.out_dir)
    try:
        table.write_csv(stage.path("spectrum.csv"))
        if args.format == "json":
            payload = {
                "pump": {"p": table.pump.p, "ell": table.pump.ell, "w0_m": table.pump.w0},
                "config_hash": cfgmod.config_hash(tree),
                "cells": {
                    f"{ks[0]},{ks[1]},{ki[0]},{ki[1]}": w
                    for (ks, ki), w in table.sorted_items()
                },
            }
            _json_dump(stage.path("spectrum.json"), payload)
        _write_manifest(stage, "spectrum", tree, exp.seed, stage.files[:])
        paths = stage.publish()
    except BaseException:
        stage.discard()
        raise
    print("\n".join(paths))
    return EXIT_OK


def cmd_stats(args):
    tree = _load_tree(args)
    stats = tree.get("stats", {})
    cal_in = stats.get("calibration", {})
    t_coh = parse_quantity(
        tree.get("experiment", {}).get("drive", {}).get("coherence_time", 0.3e-9),
        "coherence_time",
    )
    lambda_d = parse_quantity(
        tree.get("experiment", {}).get("drive", {}).get("wavelength", 524.59e-9),
        "wavelength",
    )
    power_cal = parse_quantity(cal_in.get("power", 614e-6), "calibration.power")
    cal = calibrate_kappa(
        parse_quantity(cal_in.get("coincidence_rate", 216e3), "coincidence_rate"),
        parse_quantity(cal_in.get("singles_rate", 1.13e6), "singles_rate"),
        t_coh,
        power_cal,
        lambda_d,
    )
    report_power = parse_quantity(stats.get("report_power", 72.7e-3), "report_power")
    eta_smf = float(stats.get("eta_smf", 0.382))
    eta_slm = float(stats.get("eta_slm", 0.7))
    eta = eta_smf * eta_slm

    alpha = alpha_from_drive(report_power, lambda_d, t_coh)
    gamma = cal.kappa * alpha
    n_max = stats.get("n_max")
    before = pn_tmsv(gamma, n_max=int(n_max) if n_max is not None else None, tail_limit=1e-12)
    after = apply_loss(before, eta)
    ratio = multipair_ratio(after)

    payload = {
        "config_hash": cfgmod.config_hash(tree),
        "calibration": {
            "alpha_d": cal.alpha_d,
            "gamma": cal.gamma,
            "p1": cal.p1,
            "eta_coup": cal.eta_coup,
            "kappa": cal.kappa,
            "low_gain_warning": cal.low_gain_warning,
        },
        "report": {
            "power_w": report_power,
            "alpha_d": alpha,
            "gamma": gamma,
            "eta_smf": eta_smf,
            "eta_slm": eta_slm,
            "eta": eta,
            "pn_before_loss": [float(p) for p in before.probs],
            "pn_after_loss": [float(p) for p in after.probs],
            "tail_bound": before.tail_bound,
            "multipair_ratio": ratio if ratio != float("inf") else "inf",
        },
    }
    stage = _Staging(args.out_dir)
    try:
        _json_dump(stage.path("stats.json"), payload)
        if args.format == "csv":
            before.write_csv(stage.path("pn_before_loss.csv"))
            after.write_csv(stage.path("pn_after_loss.csv"))
        _write_manifest(stage, "stats", tree, None, stage.files[:])
        paths = stage.publish()
    except BaseException:
        stage.discard()
        raise
    print("\n".join(paths))
    return EXIT_OK


def _setting_file_names(ell_s, ell_i):
    return (f"tags_s{ell_s}_i{ell_i}.tags", f"truth_s{ell_s}_i{ell_i}.json")


def cmd_simulate(args):
    tree = _load_tree(args)
    exp = cfgmod.experiment_from_tree(tree)
    scan = cfgmod.scan_settings_from_tree(tree)
    windows = cfgmod.windows_from_tree(tree)
    stage = _Staging(args.out_dir)
    try:
        if scan is None:
            result = simulate(exp)
            write_tags(result.streams, stage.path("tags.tags"))
            _json_dump(stage.path("truth.json"), result.ground_truth.to_jsonable())
        else:
            settings, time_per = scan
            bundles = run_projection_scan(exp, settings, time_per, threads=args.threads)
            manifest_settings = []
            for bundle in bundles:
                tags_name, truth_name = _setting_file_names(bundle.ell_s, bundle.ell_i)
                write_tags(bundle.streams, stage.path(tags_name))
                _json_dump(stage.path(truth_name), bundle.ground_truth.to_jsonable())
                manifest_settings.append(
                    {
                        "ell_s": bundle.ell_s,
                        "ell_i": bundle.ell_i,
                        "duration_s": bundle.duration_ps / 1e12,
                        "seed": bundle.seed,
                        "tags": tags_name,
                        "truth": truth_name,
                    }
                )
            _json_dump(
                stage.path("scan.json"),
                {
                    "config_hash": cfgmod.config_hash(tree),
                    "pump_ell": exp.pump_ell,
                    "windows_ps": {
                        "pair": windows.pair_window,
                        "herald": windows.herald_window,
                        "unheralded": windows.unheralded_window,
                    },
                    "settings": manifest_settings,
                },
            )
        _write_manifest(stage, "simulate", tree, exp.seed, stage.files[:])
        paths = stage.publish()
    except BaseException:
        stage.discard()
        raise
    print("\n".join(paths))
    return EXIT_OK


def _analyze_scan(manifest_path, tree, args, stage):
    with open(manifest_path) as fh:
        scan_manifest = json.load(fh)
    base = os.path.dirname(os.path.abspath(manifest_path))
    windows = cfgmod.windows_from_tree(tree)
    bundles = []
    for entry in scan_manifest["settings"]:
        streams = parse_tags(os.path.join(base, entry["tags"]))
        bundles.append(
            SettingStreams(
                ell_s=int(entry["ell_s"]),
                ell_i=int(entry["ell_i"]),
                streams=streams,
                duration_ps=int(round(float(entry["duration_s"]) * 1e12)),
            )
        )
    time_bin = parse_quantity(tree.get("analysis", {}).get("time_bin", 5400.0), "time_bin")
    pump_ell = int(scan_manifest.get("pump_ell", 0))
    chash = scan_manifest.get("config_hash", cfgmod.config_hash(tree))

    unheralded = build_matrix(bundles, windows, time_bin=time_bin, heralded=False, pump_ell=pump_ell)
    heralded = build_matrix(bundles, windows, time_bin=time_bin, heralded=True, pump_ell=pump_ell)
    for name, matrix in (("matrix_unheralded", unheralded), ("matrix_heralded", heralded)):
        _json_dump(stage.path(f"{name}.json"), matrix.to_jsonable(config_hash=chash))
        if args.format == "csv":
            matrix.write_csv(stage.path(f"{name}.csv"), config_hash=chash)
    return chash


def _analyze_tags(paths, tree, args, stage):
    windows = cfgmod.windows_from_tree(tree)
    bin_width, delay_range = cfgmod.histogram_settings_from_tree(tree)
    chash = cfgmod.config_hash(tree)
    summary = {}
    for path in paths:
        streams = parse_tags(path)
        stem = os.path.splitext(os.path.basename(path))[0]
        signal, idler = streams["signal"], streams["idler"]
        herald = merge_streams(streams["herald_a"], streams["herald_b"], channel="herald_a")
        duration_s = max(s.duration_ps for s in streams.values()) / 1e12

        pair_hist = cross_histogram(signal, idler, bin_width, delay_range, integration_time=duration_s)
        pair_hist.write_csv(stage.path(f"{stem}_pair_hist.csv"), config_hash=chash)

        pair_times = matched_pair_times(signal, idler, windows.pair_window)
        herald_hist = cross_histogram(
            pair_times, herald.times_ps, bin_width, delay_range, integration_time=duration_s
        )
        herald_hist.write_csv(stage.path(f"{stem}_heralded_hist.csv"), config_hash=chash)

        acc = accidental_rate(
            herald_hist,
            windows.herald_window,
            (-3 * windows.herald_window, 3 * windows.herald_window),
        )
        summary[stem] = {
            "duration_s": duration_s,
            "records": {name: len(s) for name, s in streams.items()},
            "unheralded_coincidences": count_coincidences(signal, idler, windows.unheralded_window),
            "heralded_coincidences": heralded_coincidences(herald, signal, idler, windows),
            "accidental_rate_per_window_per_s": acc.rate_per_window_per_s,
            "accidental_stderr": acc.stderr,
        }
    _json_dump(stage.path("analysis.json"), {"config_hash": chash, "runs": summary})
    return chash


def cmd_analyze(args):
    tree = _load_tree(args)
    stage = _Staging(args.out_dir)
    try:
        if args.scan_manifest:
            _analyze_scan(args.scan_manifest, tree, args, stage)
        if args.tags:
            _analyze_tags(args.tags, tree, args, stage)
        if not args.scan_manifest and not args.tags:
            raise ConfigError("analyze needs --scan-manifest and/or tag files")
        _write_manifest(stage, "analyze", tree, None, stage.files[:])
        paths = stage.publish()
    except BaseException:
        stage.discard()
        raise
    print("\n".join(paths))
    return EXIT_OK


def cmd_compare(args):
    with open(args.matrix_a) as fh:
        a = CorrelationMatrix.from_jsonable(json.load(fh))
    with open(args.matrix_b) as fh:
        b = CorrelationMatrix.from_jsonable(json.load(fh))
    payload = {
        "pearson": pearson(a, b),
        "diagonal_fraction_a": diagonal_fraction(a),
        "diagonal_fraction_b": diagonal_fraction(b),
        "per_cell_delta": {
            f"{k[0]},{k[1]}": a.cells[k].rate_per_hour - b.cells[k].rate_per_hour
            for k in a.sorted_keys()
        },
    }
    stage = _Staging(args.out_dir)
    try:
        _json_dump(stage.path("compare.json"), payload)
        paths = stage.publish()
    except BaseException:
        stage.discard()
        raise
    print(json.dumps(payload, indent=2, sort_keys=True))
    print("\n".join(paths))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="oamspdc",
        description="Cascaded-SPDC structured-light simulator and coincidence analyzer",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML config file (merged over defaults)")
        p.add_argument("--out-dir", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override experiment.seed")
        p.add_argument("--threads", type=int, default=1, help="parallel scan settings")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        p.add_argument(
            "--set", action="append", metavar="KEY.PATH=VALUE",
            help="override one config value (repeatable; wins over the file)",
        )

    common(sub.add_parser("spectrum", help="export the mode-coupling weight table"))
    common(sub.add_parser("stats", help="pump photon-number statistics report"))
    common(sub.add_parser("simulate", help="generate tag files (+ ground-truth sidecars)"))

    p_an = sub.add_parser("analyze", help="histograms and matrices from tag files")
    common(p_an)
    p_an.add_argument("--scan-manifest", help="scan.json from a projection-scan simulation")
    p_an.add_argument("tags", nargs="*", help="individual tag files")

    p_cmp = sub.add_parser("compare", help="compare two correlation-matrix JSON exports")
    p_cmp.add_argument("matrix_a")
    p_cmp.add_argument("matrix_b")
    p_cmp.add_argument("--out-dir", default=".")
    return parser


_HANDLERS = {
    "spectrum": cmd_spectrum,
    "stats": cmd_stats,
    "simulate": cmd_simulate,
    "analyze": cmd_analyze,
    "compare": cmd_compare,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, TagStreamError, OamSpdcError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
