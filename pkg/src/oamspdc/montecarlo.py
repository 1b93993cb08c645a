"""Synthetic detector timestamp streams for the cascaded two-crystal experiment.

The first source emits photon pairs in coherence-time slots: the number of
pairs per slot follows the pump-state statistics (two-mode squeezed vacuum,
or Poissonian for a quasi-classical drive), and every photon in a slot shares
that slot's time window.  Heralding photons pass a neutral-density filter and
split onto two detectors; pump photons survive the fiber/modulator loss
budget, acquire the imprinted topological charge, and convert in the second
crystal with a fixed probability per photon.  Emitted signal/idler mode pairs
are drawn from the coupling-weight table, filtered by the projective
measurement with a symmetric crosstalk probability, and finally thinned by
detector efficiency, smeared by Gaussian jitter, and mixed with uniform dark
counts.

Directly instantiating every first-source pair is infeasible at realistic
fluxes (hundreds of MHz for hours), so the generator samples only *relevant*
pairs: those whose herald is detected or whose pump photon converts.
Per-slot pair counts are Poissonized (the binomial over ~1e12 slots is
indistinguishable from Poisson) and thinned exactly, stratified by pairs per
slot so that multi-pair slots keep their intra-slot time correlations.  The
output is deterministic for a given (config, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, ParameterError
from .modes import ModeWeightTable
from .statistics import LossBudget, alpha_from_drive, pn_poissonian, pn_tmsv
from .streams import (
    CHANNELS,
    NO_MODE,
    ORIGIN_DARK,
    ORIGIN_GENUINE,
    EventStream,
    SettingStreams,
)

__all__ = [
    "DetectorParams",
    "SecondSourceParams",
    "ExperimentConfig",
    "GroundTruthSummary",
    "SimulationResult",
    "simulate",
    "run_projection_scan",
    "expected_rates",
    "derive_setting_seed",
]

PUMP_STATISTICS = ("tmsv", "poissonian")

# Probability tail discarded when truncating per-slot pair statistics.
SLOT_TAIL_LIMIT = 1e-15


@dataclass(frozen=True)
class DetectorParams:
    """Per-channel detector imperfections."""

    efficiency: float
    dark_rate: float = 0.0
    jitter_sigma: float = 0.0

    def __post_init__(self):
        if not (0 <= self.efficiency <= 1):
            raise ParameterError(f"efficiency must be in [0, 1], got {self.efficiency}")
        if self.dark_rate < 0 or self.jitter_sigma < 0:
            raise ParameterError("dark_rate and jitter_sigma must be non-negative")


@dataclass(frozen=True)
class SecondSourceParams:
    """Mode-coupling weights and the per-photon conversion probability."""

    weights: ModeWeightTable
    conversion_probability: float

    def __post_init__(self):
        if not (0 <= self.conversion_probability <= 1):
            raise ParameterError("conversion_probability must be in [0, 1]")


@dataclass(frozen=True)
class ExperimentConfig:
    drive_power: float
    drive_wavelength: float
    kappa1: float
    t_coh: float
    herald_nd_transmission: float
    herald_split: int
    pump_losses: LossBudget
    pump_ell: int
    second_source: SecondSourceParams
    crosstalk_epsilon: float
    detectors: dict
    projection: tuple
    duration: float
    seed: int
    pump_statistics: str = "tmsv"

    def validate(self):
        if self.drive_power < 0:
            raise ConfigError("drive_power must be non-negative")
        if not (self.drive_wavelength > 0 and self.t_coh > 0 and self.kappa1 > 0):
            raise ConfigError("drive_wavelength, t_coh, and kappa1 must be positive")
        if not (0 <= self.herald_nd_transmission <= 1):
            raise ConfigError("herald_nd_transmission must be in [0, 1]")
        if self.herald_split not in (1, 2):
            raise ConfigError("herald_split must be 1 or 2")
        if not (0 <= self.crosstalk_epsilon <= 1):
            raise ConfigError("crosstalk_epsilon must be in [0, 1]")
        if self.duration < 0:
            raise ConfigError("duration must be non-negative")
        if self.pump_statistics not in PUMP_STATISTICS:
            raise ConfigError(f"pump_statistics must be one of {PUMP_STATISTICS}")
        for name in CHANNELS:
            if name not in self.detectors:
                raise ConfigError(f"missing detector parameters for channel {name!r}")
        if not self.second_source.weights.entries:
            raise ConfigError("mode weight table is empty")
        self.second_source.weights.validate()
        if self.second_source.weights.pump.ell != self.pump_ell:
            raise ConfigError(
                f"weight table was built for pump ell={self.second_source.weights.pump.ell}, "
                f"config has pump_ell={self.pump_ell}"
            )
        if int(self.seed) != self.seed or not (0 <= self.seed < 2**64):
            raise ConfigError("seed must be a 64-bit unsigned integer")
        return self

    @property
    def gamma(self):
        """First-source parametric gain at the configured drive."""
        return self.kappa1 * alpha_from_drive(self.drive_power, self.drive_wavelength, self.t_coh)

    def mean_pairs_per_slot(self):
        return math.sinh(self.gamma) ** 2


@dataclass
class GroundTruthSummary:
    """Simulation-only audit record; serialized as a sidecar, never into tag files."""

    pump_ell: int
    gamma: float
    n_slots: int
    expected_first_source_pairs: float
    sampled_relevant_pairs: int
    herald_detections_genuine: int
    emitted_pairs_total: int
    emitted_counts: dict
    conservation_violations: int
    detected_genuine: dict
    dark_counts: dict

    def to_jsonable(self):
        return {
            "pump_ell": self.pump_ell,
            "gamma": self.gamma,
            "n_slots": self.n_slots,
            "expected_first_source_pairs": self.expected_first_source_pairs,
            "sampled_relevant_pairs": self.sampled_relevant_pairs,
            "herald_detections_genuine": self.herald_detections_genuine,
            "emitted_pairs_total": self.emitted_pairs_total,
            "emitted_counts": {f"{k[0]},{k[1]}": v for k, v in sorted(self.emitted_counts.items())},
            "conservation_violations": self.conservation_violations,
            "detected_genuine": dict(self.detected_genuine),
            "dark_counts": dict(self.dark_counts),
        }


@dataclass
class SimulationResult:
    streams: dict
    ground_truth: GroundTruthSummary


_MASK64 = (1 << 64) - 1


def derive_setting_seed(master_seed, index):
    """Per-setting seed: splitmix64 finalizer of master + (index+1) * golden gamma.

    This is the documented expansion used by run_projection_scan; scan
    settings therefore own disjoint, reproducible random substreams.
    """
    x = (master_seed + (index + 1) * 0x9E3779B97F4A7C15) & _MASK64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _MASK64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _MASK64
    x ^= x >> 31
    return x


def _herald_arm_probability(config: ExperimentConfig):
    """Detection probability for one heralding photon, and the a:b arm split."""
    det_a = config.detectors["herald_a"].efficiency
    det_b = config.detectors["herald_b"].efficiency
    if config.pump_statistics == "poissonian":
        return 0.0, 0.5
    if config.herald_split == 1:
        p = config.herald_nd_transmission * det_a
        return p, 1.0
    p = config.herald_nd_transmission * 0.5 * (det_a + det_b)
    frac_a = det_a / (det_a + det_b) if det_a + det_b > 0 else 0.5
    return p, frac_a


def _mode_sampling_arrays(table: ModeWeightTable):
    """Nonzero table cells as flat arrays for categorical sampling."""
    keys = [k for k, w in table.sorted_items()]
    weights = np.array([table.entries[k] for k in keys], dtype=float)
    support = weights > 0
    keys = [k for k, s in zip(keys, support) if s]
    weights = weights[support]
    cdf = np.cumsum(weights / weights.sum())
    cdf[-1] = 1.0
    p_s = np.array([k[0][0] for k in keys], dtype=np.int8)
    ell_s = np.array([k[0][1] for k in keys], dtype=np.int8)
    p_i = np.array([k[1][0] for k in keys], dtype=np.int8)
    ell_i = np.array([k[1][1] for k in keys], dtype=np.int8)
    return cdf, p_s, ell_s, p_i, ell_i


def _sample_relevant_pairs(rng, config, p_herald, p_convert):
    """Times and classes of first-source pairs that can produce any event.

    Returns (times_s, herald_flag, convert_flag) for every sampled pair.
    Single-pair slots dominate and are drawn as three independent Poisson
    processes (herald-only, convert-only, both); multi-pair slots are drawn
    jointly so photons sharing a slot share its time window.
    """
    n_slots = int(config.duration / config.t_coh)
    if n_slots <= 0 or (p_herald == 0.0 and p_convert == 0.0):
        return (np.empty(0), np.empty(0, dtype=bool), np.empty(0, dtype=bool))

    if config.pump_statistics == "tmsv":
        dist = pn_tmsv(config.gamma, tail_limit=SLOT_TAIL_LIMIT)
    else:
        dist = pn_poissonian(config.mean_pairs_per_slot(), tail_limit=SLOT_TAIL_LIMIT)
    pk = dist.probs

    p_rel = p_herald + p_convert - p_herald * p_convert
    class_probs = np.array(
        [p_herald * (1 - p_convert), (1 - p_herald) * p_convert, p_herald * p_convert]
    )
    class_probs = class_probs / class_probs.sum()

    times = []
    heralds = []
    converts = []

    def slot_times(count):
        idx = rng.integers(0, n_slots, size=count)
        return idx * config.t_coh

    # k = 1: each relevant pair is its own slot.
    if len(pk) > 1 and pk[1] > 0:
        lam1 = n_slots * pk[1] * p_rel
        m1 = rng.poisson(lam1)
        if m1:
            base = slot_times(m1)
            cls = rng.choice(3, size=m1, p=class_probs)
            times.append(base + rng.uniform(0, config.t_coh, size=m1))
            heralds.append((cls == 0) | (cls == 2))
            converts.append((cls == 1) | (cls == 2))

    # k >= 2: sample relevant-pair multiplicity per slot, then expand.
    for k in range(2, len(pk)):
        if pk[k] <= 0:
            continue
        p_rel_k = 1.0 - (1.0 - p_rel) ** k
        lam_k = n_slots * pk[k] * p_rel_k
        if lam_k <= 0:
            continue
        m_k = rng.poisson(lam_k)
        if not m_k:
            continue
        # Binomial(k, p_rel) multiplicity conditioned on >= 1.
        j_support = np.arange(1, k + 1)
        pmf = np.array(
            [math.comb(k, j) * p_rel**j * (1 - p_rel) ** (k - j) for j in j_support]
        )
        pmf = pmf / pmf.sum()
        j_counts = rng.choice(j_support, size=m_k, p=pmf)
        base = np.repeat(slot_times(m_k), j_counts)
        n_rows = int(j_counts.sum())
        cls = rng.choice(3, size=n_rows, p=class_probs)
        times.append(base + rng.uniform(0, config.t_coh, size=n_rows))
        heralds.append((cls == 0) | (cls == 2))
        converts.append((cls == 1) | (cls == 2))

    if not times:
        return (np.empty(0), np.empty(0, dtype=bool), np.empty(0, dtype=bool))
    t = np.concatenate(times)
    h = np.concatenate(heralds)
    c = np.concatenate(converts)
    order = np.argsort(t, kind="stable")
    return t[order], h[order], c[order]


def _finalize_channel(rng, config, channel, t_genuine, pair_id, ell_s, ell_i):
    """Apply jitter and dark counts, convert to sorted integer picoseconds."""
    det = config.detectors[channel]
    duration_ps = int(round(config.duration * 1e12))

    if t_genuine.size and det.jitter_sigma > 0:
        t_genuine = t_genuine + rng.normal(0.0, det.jitter_sigma, size=t_genuine.size)

    n_dark = rng.poisson(det.dark_rate * config.duration)
    t_dark = rng.uniform(0.0, config.duration, size=n_dark)

    times = np.concatenate([t_genuine, t_dark])
    origin = np.concatenate(
        [
            np.full(t_genuine.size, ORIGIN_GENUINE, dtype=np.uint8),
            np.full(n_dark, ORIGIN_DARK, dtype=np.uint8),
        ]
    )
    pid = np.concatenate([pair_id, np.full(n_dark, -1, dtype=np.int64)])
    es = np.concatenate([ell_s, np.full(n_dark, NO_MODE, dtype=np.int8)])
    ei = np.concatenate([ell_i, np.full(n_dark, NO_MODE, dtype=np.int8)])

    ticks = np.floor(times * 1e12 + 0.5).astype(np.int64)
    keep = (ticks >= 0) & (ticks <= duration_ps)
    ticks, origin, pid, es, ei = ticks[keep], origin[keep], pid[keep], es[keep], ei[keep]
    order = np.argsort(ticks, kind="stable")
    return EventStream(
        channel,
        ticks[order],
        origin=origin[order],
        pair_id=pid[order],
        ell_s=es[order],
        ell_i=ei[order],
        duration_ps=duration_ps,
    ).validate()


def simulate(config: ExperimentConfig) -> SimulationResult:
    """Run one projection setting; deterministic for a given (config, seed)."""
    config.validate()
    rng = np.random.default_rng(np.random.PCG64(config.seed))

    p_herald, frac_a = _herald_arm_probability(config)
    p_convert = (
        config.pump_losses.eta_total * config.second_source.conversion_probability
    )

    t_pair, is_herald, is_convert = _sample_relevant_pairs(rng, config, p_herald, p_convert)
    pair_ids = np.arange(t_pair.size, dtype=np.int64)

    # Heralding arm: route detected heralds between the two detectors.
    th = t_pair[is_herald]
    hid = pair_ids[is_herald]
    to_a = rng.random(th.size) < frac_a if config.herald_split == 2 else np.ones(th.size, dtype=bool)

    # Second source: emitted mode pair per converting pump photon.
    tc = t_pair[is_convert]
    cid = pair_ids[is_convert]
    cdf, sup_ps, sup_ells, sup_pi, sup_elli = _mode_sampling_arrays(config.second_source.weights)
    pick = np.searchsorted(cdf, rng.random(tc.size), side="right")
    pick = np.minimum(pick, cdf.size - 1)
    em_ps, em_ells = sup_ps[pick], sup_ells[pick]
    em_pi, em_elli = sup_pi[pick], sup_elli[pick]

    emitted_counts = {}
    if tc.size:
        uniq, counts = np.unique(
            np.stack([em_ells.astype(np.int64), em_elli.astype(np.int64)], axis=1),
            axis=0,
            return_counts=True,
        )
        for (ls, li), n in zip(uniq, counts):
            emitted_counts[(int(ls), int(li))] = int(n)
    violations = int(
        np.count_nonzero(em_ells.astype(np.int64) + em_elli.astype(np.int64) != config.pump_ell)
    )

    # Projective measurement with symmetric crosstalk.
    proj_s, proj_i = config.projection
    n_cells = len(config.second_source.weights.entries)
    match = (em_ps == 0) & (em_pi == 0) & (em_ells == proj_s) & (em_elli == proj_i)
    eps = config.crosstalk_epsilon
    p_pass = np.where(match, 1.0 - eps, eps / max(n_cells - 1, 1))
    passed = rng.random(tc.size) < p_pass

    tp, pidp = tc[passed], cid[passed]
    ells_p, elli_p = em_ells[passed], em_elli[passed]
    sig_det = rng.random(tp.size) < config.detectors["signal"].efficiency
    idl_det = rng.random(tp.size) < config.detectors["idler"].efficiency

    def no_mode(n):
        return np.full(n, NO_MODE, dtype=np.int8)

    n_a = int(np.count_nonzero(to_a))
    n_b = th.size - n_a
    streams = {
        "herald_a": _finalize_channel(
            rng, config, "herald_a", th[to_a], hid[to_a], no_mode(n_a), no_mode(n_a)
        ),
        "herald_b": _finalize_channel(
            rng, config, "herald_b", th[~to_a], hid[~to_a], no_mode(n_b), no_mode(n_b)
        ),
        "signal": _finalize_channel(
            rng, config, "signal", tp[sig_det], pidp[sig_det], ells_p[sig_det], elli_p[sig_det]
        ),
        "idler": _finalize_channel(
            rng, config, "idler", tp[idl_det], pidp[idl_det], ells_p[idl_det], elli_p[idl_det]
        ),
    }

    n_slots = int(config.duration / config.t_coh)
    mean_pairs = config.mean_pairs_per_slot()
    truth = GroundTruthSummary(
        pump_ell=config.pump_ell,
        gamma=config.gamma,
        n_slots=n_slots,
        expected_first_source_pairs=n_slots * mean_pairs,
        sampled_relevant_pairs=int(t_pair.size),
        herald_detections_genuine=int(th.size),
        emitted_pairs_total=int(tc.size),
        emitted_counts=emitted_counts,
        conservation_violations=violations,
        detected_genuine={
            ch: int(np.count_nonzero(streams[ch].origin == ORIGIN_GENUINE)) for ch in CHANNELS
        },
        dark_counts={
            ch: int(np.count_nonzero(streams[ch].origin == ORIGIN_DARK)) for ch in CHANNELS
        },
    )
    return SimulationResult(streams=streams, ground_truth=truth)


def run_projection_scan(config: ExperimentConfig, settings, time_per_setting, threads=1):
    """Simulate each (ell_s, ell_i) setting with a derived per-setting seed.

    Settings are independent random substreams, so the scan may run them in
    parallel; results are returned in scan order either way.
    """
    if not settings:
        raise ConfigError("settings list is empty")

    def one(index_setting):
        index, setting = index_setting
        sub = replace(
            config,
            projection=(int(setting[0]), int(setting[1])),
            duration=time_per_setting,
            seed=derive_setting_seed(config.seed, index),
        )
        result = simulate(sub)
        return SettingStreams(
            ell_s=int(setting[0]),
            ell_i=int(setting[1]),
            streams=result.streams,
            duration_ps=int(round(time_per_setting * 1e12)),
            ground_truth=result.ground_truth,
            seed=sub.seed,
        )

    tasks = list(enumerate(settings))
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, tasks))
    return [one(t) for t in tasks]


@dataclass(frozen=True)
class RatePrediction:
    """Analytic forward model of the observable rates for one configuration.

    Serves as the independent oracle for the event-level Monte Carlo: genuine
    detected pair rate in the configured projection, accidental-corrected
    heralded rate, herald singles rate, and the flat accidental level of the
    heralded delay histogram (per coincidence window per second).
    """

    first_source_pair_rate: float
    emitted_pair_rate: float
    unheralded_pair_rate: float
    heralded_pair_rate: float
    herald_singles_rate: float
    accidental_rate_per_window: float
    signal_singles_rate: float
    idler_singles_rate: float


def _window_capture(window_ps, sigma_a, sigma_b):
    """Probability that a jitter-smeared true delay stays inside +-window/2."""
    s = math.hypot(sigma_a, sigma_b)
    if s == 0:
        return 1.0
    return math.erf(window_ps * 1e-12 / 2.0 / (s * math.sqrt(2.0)))


def _same_slot_window_fraction(window_ps, t_coh):
    """P(|u1 - u2| <= window/2) for independent uniforms in one slot."""
    w = window_ps * 1e-12 / 2.0
    if w >= t_coh:
        return 1.0
    return 1.0 - (1.0 - w / t_coh) ** 2


def expected_rates(config: ExperimentConfig, windows) -> RatePrediction:
    """Forward-model rates for the configured projection setting.

    `windows` carries pair/herald/unheralded coincidence windows in ps.
    Second-order terms (double conversions within a slot, dark-dark pairs)
    are neglected; they are far below the statistical resolution of any run
    this package simulates.
    """
    config.validate()
    p_herald, _ = _herald_arm_probability(config)
    p_convert = config.pump_losses.eta_total * config.second_source.conversion_probability

    mean_pairs = config.mean_pairs_per_slot()
    pair_rate = mean_pairs / config.t_coh

    table = config.second_source.weights
    eps = config.crosstalk_epsilon
    n_cells = len(table.entries)
    proj = ((0, config.projection[0]), (0, config.projection[1]))
    w_proj = table.entries.get(proj, 0.0)
    total_w = table.total()
    if table.normalized:
        w_proj_frac = w_proj
    else:
        w_proj_frac = w_proj / total_w if total_w > 0 else 0.0
    p_project = w_proj_frac * (1 - eps) + (1 - w_proj_frac) * eps / max(n_cells - 1, 1)

    eta_s = config.detectors["signal"].efficiency
    eta_i = config.detectors["idler"].efficiency
    sig_s = config.detectors["signal"].jitter_sigma
    sig_i = config.detectors["idler"].jitter_sigma
    sig_h = max(
        config.detectors["herald_a"].jitter_sigma, config.detectors["herald_b"].jitter_sigma
    )

    emitted_rate = pair_rate * p_convert
    pair_detect = emitted_rate * p_project * eta_s * eta_i

    u_capture = _window_capture(windows.unheralded_window, sig_s, sig_i)
    unheralded = pair_detect * u_capture

    # Heralded rate: a detected pair is heralded when its own herald or the
    # herald of any same-slot sibling pair lands inside the herald window.
    # For the thermal pump the sibling count of a tagged pair is negative
    # binomial with r = 2 (size-biased geometric minus one), whose generating
    # function gives the exact no-sibling-herald probability; the Poissonian
    # pump produces no heralds at all.
    pair_capture = _window_capture(windows.pair_window, sig_s, sig_i)
    own_capture = _window_capture(windows.herald_window, sig_s, sig_h)
    q_sibling = p_herald * _same_slot_window_fraction(windows.herald_window, config.t_coh)
    if config.pump_statistics == "tmsv":
        m = mean_pairs / (1.0 + mean_pairs)
        p_no_sibling = ((1.0 - m) / (1.0 - m * (1.0 - q_sibling))) ** 2
    else:
        p_no_sibling = math.exp(-mean_pairs * q_sibling)
    p_heralded = 1.0 - (1.0 - p_herald * own_capture) * p_no_sibling
    herald_singles = pair_rate * p_herald + (
        config.detectors["herald_a"].dark_rate + config.detectors["herald_b"].dark_rate
    )
    heralded = pair_detect * pair_capture * p_heralded

    accidental = pair_detect * herald_singles * (windows.herald_window * 1e-12)

    signal_singles = (
        emitted_rate * p_project * eta_s + config.detectors["signal"].dark_rate
    )
    idler_singles = (
        emitted_rate * p_project * eta_i + config.detectors["idler"].dark_rate
    )

    return RatePrediction(
        first_source_pair_rate=pair_rate,
        emitted_pair_rate=emitted_rate,
        unheralded_pair_rate=unheralded,
        heralded_pair_rate=heralded,
        herald_singles_rate=herald_singles,
        accidental_rate_per_window=accidental,
        signal_singles_rate=signal_singles,
        idler_singles_rate=idler_singles,
    )
