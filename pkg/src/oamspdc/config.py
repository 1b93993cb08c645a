"""Declarative configuration: YAML ingestion, normalization, and hashing.

A single config file drives every CLI workflow.  Quantities may carry unit
suffixes ("614 uW", "0.3 ns"); normalization converts everything to SI
floats before hashing, so two files describing the same physics hash
identically regardless of unit spelling.  The canonical form sorts keys and
uses shortest-round-trip decimal formatting.
"""

from __future__ import annotations

import hashlib
import json
import math

import yaml

from .analysis import CoincidenceWindows
from .errors import ConfigError
from .modes import LGModeSpec, PhaseMatchParams, spdc_mode_weights
from .montecarlo import DetectorParams, ExperimentConfig, SecondSourceParams
from .statistics import LossBudget
from .streams import CHANNELS
from .units import parse_quantity

__all__ = [
    "load_config",
    "default_config",
    "apply_overrides",
    "canonical_json",
    "config_hash",
    "experiment_from_tree",
    "windows_from_tree",
    "histogram_settings_from_tree",
    "scan_settings_from_tree",
]


def load_config(path):
    try:
        with open(path, "r") as fh:
            tree = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config file {path}: {exc}") from exc
    if tree is None:
        tree = {}
    if not isinstance(tree, dict):
        raise ConfigError(f"config root must be a mapping, got {type(tree).__name__}")
    return tree


def default_config():
    """Defaults mirroring the zero-charge pump configuration.

    The physics parameters (waist ratio, windows, crosstalk, loss budget,
    gain calibration) are the benchmark values; the first-source flux and
    conversion probability default to the desk scale so that the simulator
    produces meaningful statistics in seconds.
    """
    from . import presets

    cfg = presets.desk_config(pump_ell=0, duration=60.0, seed=1)
    return {
        "experiment": {
            "seed": cfg.seed,
            "duration": cfg.duration,
            "pump_statistics": cfg.pump_statistics,
            "drive": {
                "power": cfg.drive_power,
                "wavelength": cfg.drive_wavelength,
                "coherence_time": cfg.t_coh,
                "kappa": cfg.kappa1,
            },
            "pump": {
                "ell": cfg.pump_ell,
                "eta_smf": cfg.pump_losses.eta_smf,
                "eta_slm": cfg.pump_losses.eta_slm,
            },
            "herald": {
                "nd_transmission": cfg.herald_nd_transmission,
                "split": cfg.herald_split,
            },
            "second_source": {
                "conversion_probability": cfg.second_source.conversion_probability,
                "signal_idler_waist": presets.DEFAULT_SIGNAL_IDLER_WAIST,
                "waist_ratio": presets.R_W0_BY_PUMP_ELL[0],
                "pump_p": 0,
                "p_max": 0,
                "ell_span": 1,
                "delta_k": 0.0,
                "crystal_length": presets.SECOND_CRYSTAL_LENGTH,
            },
            "crosstalk_epsilon": cfg.crosstalk_epsilon,
            "projection": {"ell_s": cfg.projection[0], "ell_i": cfg.projection[1]},
            "detectors": {
                name: {
                    "efficiency": det.efficiency,
                    "dark_rate": det.dark_rate,
                    "jitter_sigma": det.jitter_sigma,
                }
                for name, det in cfg.detectors.items()
            },
        },
        "analysis": {
            "windows": {"pair": 1e-9, "herald": 300e-12, "unheralded": 400e-12},
            "histogram": {"bin_width": 100e-12, "range": [-5e-9, 5e-9]},
            "time_bin": 5400.0,
        },
        "stats": {
            "calibration": {
                "coincidence_rate": presets.CAL_COINCIDENCE_RATE,
                "singles_rate": presets.CAL_SINGLES_RATE,
                "power": presets.CAL_DRIVE_POWER,
            },
            "report_power": 72.7e-3,
            "eta_smf": presets.ETA_SMF,
            "eta_slm": presets.ETA_SLM,
        },
    }


def merge_trees(base, override):
    """Recursive dict merge; override wins on scalar conflicts."""
    out = dict(base)
    for key, val in override.items():
        if key in out and isinstance(out[key], dict) and isinstance(val, dict):
            out[key] = merge_trees(out[key], val)
        else:
            out[key] = val
    return out


def apply_overrides(tree, assignments):
    """Apply `a.b.c=value` command-line overrides; values parse as YAML scalars."""
    out = json.loads(json.dumps(tree))  # deep copy of plain data
    for item in assignments or []:
        path, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not of the form key.path=value")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse override value {raw!r}") from exc
        node = out
        keys = path.split(".")
        for key in keys[:-1]:
            nxt = node.get(key)
            if not isinstance(nxt, dict):
                nxt = {}
                node[key] = nxt
            node = nxt
        node[keys[-1]] = value
    return out


def _canonical_number(x):
    if isinstance(x, bool):
        return x
    if isinstance(x, int):
        return x
    if isinstance(x, float):
        if math.isnan(x) or math.isinf(x):
            raise ConfigError("non-finite number in configuration")
        if x == int(x) and abs(x) < 2**53:
            return int(x)
        return float(repr(x))
    return x


def _normalize(node):
    if isinstance(node, dict):
        return {str(k): _normalize(v) for k, v in sorted(node.items())}
    if isinstance(node, (list, tuple)):
        return [_normalize(v) for v in node]
    return _canonical_number(node)


def canonical_json(tree):
    """Sorted-key, trailing-zero-free JSON encoding used for hashing."""
    return json.dumps(_normalize(tree), sort_keys=True, separators=(",", ":"))


def config_hash(tree):
    return hashlib.sha256(canonical_json(tree).encode("utf-8")).hexdigest()


def _get(tree, path, default=None, required=False):
    node = tree
    for key in path.split("."):
        if not isinstance(node, dict) or key not in node:
            if required:
                raise ConfigError(f"missing required config key {path!r}")
            return default
        node = node[key]
    return node


def _quantity(tree, path, default=None, required=False):
    raw = _get(tree, path, default=None, required=required)
    if raw is None:
        return default
    return parse_quantity(raw, name=path)


def experiment_from_tree(tree):
    """Build a validated ExperimentConfig (including the mode table) from a tree."""
    exp = tree.get("experiment")
    if not isinstance(exp, dict):
        raise ConfigError("config has no 'experiment' section")

    pump_ell = int(_get(exp, "pump.ell", 0))
    ss = exp.get("second_source", {})
    w_si = parse_quantity(ss.get("signal_idler_waist", 25e-6), "signal_idler_waist")
    ratio = float(ss.get("waist_ratio", 2.4))
    pump = LGModeSpec(p=int(ss.get("pump_p", 0)), ell=pump_ell, w0=ratio * w_si)
    span = int(ss.get("ell_span", 1))
    table = spdc_mode_weights(
        pump,
        w_si,
        p_max=int(ss.get("p_max", 0)),
        ell_range=(-span, span),
        phasematch=PhaseMatchParams(
            delta_k=parse_quantity(ss.get("delta_k", 0.0), "delta_k"),
            crystal_length=parse_quantity(ss.get("crystal_length", 0.025), "crystal_length"),
        ),
    )

    detectors = {}
    det_tree = exp.get("detectors", {})
    for name in CHANNELS:
        d = det_tree.get(name, {})
        detectors[name] = DetectorParams(
            efficiency=float(d.get("efficiency", 1.0)),
            dark_rate=parse_quantity(d.get("dark_rate", 0.0), f"{name}.dark_rate"),
            jitter_sigma=parse_quantity(d.get("jitter_sigma", 0.0), f"{name}.jitter_sigma"),
        )

    proj = exp.get("projection", {})
    config = ExperimentConfig(
        drive_power=_quantity(exp, "drive.power", required=True),
        drive_wavelength=_quantity(exp, "drive.wavelength", required=True),
        kappa1=float(_get(exp, "drive.kappa", required=True)),
        t_coh=_quantity(exp, "drive.coherence_time", required=True),
        herald_nd_transmission=float(_get(exp, "herald.nd_transmission", 1.0)),
        herald_split=int(_get(exp, "herald.split", 2)),
        pump_losses=LossBudget(
            eta_smf=float(_get(exp, "pump.eta_smf", 1.0)),
            eta_slm=float(_get(exp, "pump.eta_slm", 1.0)),
        ),
        pump_ell=pump_ell,
        second_source=SecondSourceParams(
            weights=table,
            conversion_probability=float(ss.get("conversion_probability", 0.0)),
        ),
        crosstalk_epsilon=float(exp.get("crosstalk_epsilon", 0.0)),
        detectors=detectors,
        projection=(int(proj.get("ell_s", 0)), int(proj.get("ell_i", 0))),
        duration=_quantity(exp, "duration", required=True),
        seed=int(exp.get("seed", 0)),
        pump_statistics=str(exp.get("pump_statistics", "tmsv")),
    )
    return config.validate()


def windows_from_tree(tree):
    w = _get(tree, "analysis.windows", {}) or {}

    def to_ps(key, dflt):
        return int(round(parse_quantity(w.get(key, dflt), key) * 1e12))

    return CoincidenceWindows(
        pair_window=to_ps("pair", 1e-9),
        herald_window=to_ps("herald", 300e-12),
        unheralded_window=to_ps("unheralded", 400e-12),
    )


def histogram_settings_from_tree(tree):
    h = _get(tree, "analysis.histogram", {}) or {}
    bin_width = int(round(parse_quantity(h.get("bin_width", 100e-12), "bin_width") * 1e12))
    rng = h.get("range", [-5e-9, 5e-9])
    lo = int(round(parse_quantity(rng[0], "range.lo") * 1e12))
    hi = int(round(parse_quantity(rng[1], "range.hi") * 1e12))
    return bin_width, (lo, hi)


def scan_settings_from_tree(tree):
    """Settings list and per-setting time from the scan section, if present."""
    scan = tree.get("scan")
    if not isinstance(scan, dict):
        return None
    if "settings" in scan:
        settings = [(int(s[0]), int(s[1])) for s in scan["settings"]]
    else:
        grid = scan.get("grid", {})
        span_s = grid.get("ell_s", [-1, 1])
        span_i = grid.get("ell_i", [-1, 1])
        settings = [
            (ls, li)
            for ls in range(int(span_s[0]), int(span_s[1]) + 1)
            for li in range(int(span_i[0]), int(span_i[1]) + 1)
        ]
    time_per = parse_quantity(scan.get("time_per_setting", 60.0), "time_per_setting")
    return settings, time_per
