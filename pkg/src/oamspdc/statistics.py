"""Photon-number statistics of the pump state.

Covers the two-mode squeezed vacuum number distribution P(n) =
tanh^{2n}(g) / cosh^2(g), calibration of the effective nonlinearity from
measured rates, binomial loss transforms, multi-pair ratios, and the
OAM mean/spread implied by a number distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import binom as _binom, poisson as _poisson

from .constants import C_LIGHT, HBAR
from .errors import NumericalError, ParameterError

__all__ = [
    "PhotonNumberDistribution",
    "GainCalibration",
    "LossBudget",
    "pn_tmsv",
    "pn_poissonian",
    "alpha_from_drive",
    "calibrate_kappa",
    "apply_loss",
    "multipair_ratio",
    "oam_fluctuation",
]

# Default ceiling on the probability mass allowed beyond the truncation order.
DEFAULT_TAIL_LIMIT = 1e-12


@dataclass
class PhotonNumberDistribution:
    """Truncated P(n) over n = 0..n_max with a declared bound on the lost tail."""

    probs: np.ndarray
    tail_bound: float

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        if self.probs.ndim != 1 or self.probs.size == 0:
            raise ParameterError("probs must be a non-empty 1-D array")
        if np.any(self.probs < 0):
            raise ParameterError("probabilities must be non-negative")
        if self.tail_bound < 0:
            raise ParameterError("tail_bound must be non-negative")
        s = float(self.probs.sum())
        if s > 1 + 1e-12 or s + self.tail_bound < 1 - 1e-12:
            raise ParameterError(
                f"probabilities sum to {s!r} with tail bound {self.tail_bound!r}; "
                "normalization violated"
            )

    @property
    def n_max(self):
        return self.probs.size - 1

    def mean(self):
        return float(np.dot(np.arange(self.probs.size), self.probs))

    def variance(self):
        n = np.arange(self.probs.size)
        m = self.mean()
        return float(np.dot((n - m) ** 2, self.probs))

    def p_more_than_one(self):
        return float(self.probs[2:].sum())

    def write_csv(self, destination):
        """Export as CSV rows `n,prob` plus a trailing `# tail_bound=` comment."""

        def _dump(fh):
            fh.write("n,prob\n")
            for n, p in enumerate(self.probs):
                fh.write(f"{n},{p:.17g}\n")
            fh.write(f"# tail_bound={self.tail_bound:.17g}\n")

        if hasattr(destination, "write"):
            _dump(destination)
        else:
            with open(destination, "w", newline="") as fh:
                _dump(fh)

    @classmethod
    def read_csv(cls, source):
        def _load(fh):
            tail = 0.0
            probs = {}
            header = fh.readline().strip()
            if header != "n,prob":
                raise ParameterError(f"bad distribution CSV header {header!r}")
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    key, _, val = line.lstrip("# ").partition("=")
                    if key.strip() == "tail_bound":
                        tail = float(val)
                    continue
                n_str, _, p_str = line.partition(",")
                probs[int(n_str)] = float(p_str)
            if not probs:
                raise ParameterError("distribution CSV has no rows")
            arr = np.zeros(max(probs) + 1)
            for n, p in probs.items():
                arr[n] = p
            return cls(arr, tail)

        if hasattr(source, "read"):
            return _load(source)
        with open(source, "r", newline="") as fh:
            return _load(fh)


@dataclass(frozen=True)
class GainCalibration:
    """Effective nonlinearity and the drive parameters it was derived with."""

    kappa: float
    t_coh: float
    lambda_d: float
    alpha_d: float = 0.0
    gamma: float = 0.0
    p1: float = 0.0
    eta_coup: float = 0.0
    low_gain_warning: bool = False

    def __post_init__(self):
        if not (self.kappa > 0 and self.t_coh > 0 and self.lambda_d > 0):
            raise ParameterError("kappa, t_coh, and lambda_d must all be positive")


@dataclass(frozen=True)
class LossBudget:
    """Multiplicative transmission budget between source and second crystal."""

    eta_smf: float
    eta_slm: float
    eta_det: float = 1.0

    def __post_init__(self):
        for name in ("eta_smf", "eta_slm", "eta_det"):
            v = getattr(self, name)
            if not (0 < v <= 1):
                raise ParameterError(f"{name} must be in (0, 1], got {v}")

    @property
    def eta_total(self):
        return self.eta_smf * self.eta_slm


def pn_tmsv(gamma, n_max=None, tail_limit=None):
    """Two-mode squeezed vacuum number distribution P(n) = tanh^{2n}g / cosh^2 g.

    The truncation tail is the exact geometric remainder tanh^{2(n_max+1)}(g).
    With n_max omitted, the smallest truncation meeting the tail limit
    (default 1e-12) is chosen; with both given, an insufficient n_max raises
    NumericalError suggesting the required order.
    """
    if gamma < 0:
        raise ParameterError(f"gamma must be non-negative, got {gamma}")
    t = math.tanh(gamma) ** 2
    limit = DEFAULT_TAIL_LIMIT if tail_limit is None else tail_limit

    def tail(nm):
        return t ** (nm + 1)

    if n_max is None:
        if t == 0.0:
            n_max = 0
        else:
            n_max = max(0, math.ceil(math.log(limit) / math.log(t)) - 1)
            while tail(n_max) >= limit:
                n_max += 1
    elif tail_limit is not None and tail(n_max) > tail_limit:
        needed = max(0, math.ceil(math.log(tail_limit) / math.log(t)) - 1) if t > 0 else 0
        raise NumericalError(
            f"n_max={n_max} leaves a tail of {tail(n_max):.3e} > {tail_limit:g}; "
            f"use n_max >= {needed}",
            estimate=None,
        )

    n = np.arange(n_max + 1)
    probs = t**n / math.cosh(gamma) ** 2
    return PhotonNumberDistribution(probs, tail(n_max))


def pn_poissonian(mean, n_max=None, tail_limit=None):
    """Poissonian number distribution, truncated under the same tail policy."""
    if mean < 0:
        raise ParameterError(f"mean must be non-negative, got {mean}")
    limit = DEFAULT_TAIL_LIMIT if tail_limit is None else tail_limit
    if n_max is None:
        n_max = 0
        while _poisson.sf(n_max, mean) >= limit:
            n_max += max(1, int(0.2 * n_max))
        while n_max > 0 and _poisson.sf(n_max - 1, mean) < limit:
            n_max -= 1
    tail = float(_poisson.sf(n_max, mean))
    if tail_limit is not None and tail > tail_limit:
        raise NumericalError(f"n_max={n_max} leaves a Poisson tail of {tail:.3e} > {tail_limit:g}")
    probs = _poisson.pmf(np.arange(n_max + 1), mean)
    return PhotonNumberDistribution(probs, tail)


def alpha_from_drive(power, lambda_d, t_coh):
    """Dimensionless drive amplitude sqrt(n_d): photons per coherence time.

    alpha = sqrt(P t_coh / (hbar omega)) with omega = 2 pi c / lambda.
    """
    if power < 0:
        raise ParameterError(f"power must be non-negative, got {power}")
    if not (lambda_d > 0 and t_coh > 0):
        raise ParameterError("lambda_d and t_coh must be positive")
    omega = 2.0 * math.pi * C_LIGHT / lambda_d
    return math.sqrt(power * t_coh / (HBAR * omega))


# Parametric gain above which the quadratic low-gain approximation drifts
# beyond the percent level.
LOW_GAIN_THRESHOLD = 0.1


def calibrate_kappa(coincidence_rate, singles_rate, t_coh, power, lambda_d):
    """Effective nonlinearity from measured coincidence and singles rates.

    The coupling efficiency is the coincidence-to-singles ratio; the inferred
    pair-generation probability per coherence time is singles / coupling *
    t_coh, whose square root is the parametric gain; kappa is gain divided by
    the drive amplitude.  A gain at or above 0.1 sets low_gain_warning on the
    result instead of failing.
    """
    if coincidence_rate <= 0 or singles_rate <= 0:
        raise ParameterError("rates must be positive")
    if coincidence_rate > singles_rate:
        raise ParameterError(
            f"coincidence rate {coincidence_rate} exceeds singles rate {singles_rate}"
        )
    if power <= 0:
        raise ParameterError("power must be positive")
    eta_coup = coincidence_rate / singles_rate
    p1 = (singles_rate / eta_coup) * t_coh
    gamma = math.sqrt(p1)
    alpha = alpha_from_drive(power, lambda_d, t_coh)
    if alpha == 0:
        raise ParameterError("zero drive amplitude")
    return GainCalibration(
        kappa=gamma / alpha,
        t_coh=t_coh,
        lambda_d=lambda_d,
        alpha_d=alpha,
        gamma=gamma,
        p1=p1,
        eta_coup=eta_coup,
        low_gain_warning=gamma >= LOW_GAIN_THRESHOLD,
    )


def apply_loss(dist: PhotonNumberDistribution, eta):
    """Binomial (beam-splitter) loss transform of a number distribution.

    P'(n) = sum_{j >= n} P(j) C(j, n) eta^n (1 - eta)^{j - n} over the
    truncated support.  Mass lost to the input tail can only populate the
    output tail or slightly deplete low orders, so the input tail bound is a
    valid output tail bound and is propagated unchanged.
    """
    if not (0 <= eta <= 1):
        raise ParameterError(f"eta must be in [0, 1], got {eta}")
    j = np.arange(dist.n_max + 1)
    # transform[n, j] = C(j, n) eta^n (1 - eta)^(j - n), zero for n > j
    transform = _binom.pmf(j[:, None], j[None, :], eta)
    probs = transform @ dist.probs
    return PhotonNumberDistribution(probs, dist.tail_bound)


def multipair_ratio(dist: PhotonNumberDistribution):
    """Ratio P(1) / P(n > 1); returns inf when no multi-pair mass is resolvable.

    The truncated P(>1) underestimates the true value by at most the tail
    bound, so the returned ratio is reliable whenever P(>1) dominates the
    tail.
    """
    p1 = float(dist.probs[1]) if dist.n_max >= 1 else 0.0
    p_multi = dist.p_more_than_one()
    if p_multi <= 0.0:
        return math.inf
    return p1 / p_multi


def oam_fluctuation(dist: PhotonNumberDistribution, ell_p):
    """Mean and standard deviation of the total OAM, in hbar units.

    For a pump prepared with topological charge ell_p, the total OAM is
    ell_p times the photon number, so mean = ell_p <n> and
    std = |ell_p| Delta n.
    """
    if int(ell_p) != ell_p:
        raise ParameterError(f"ell_p must be an integer, got {ell_p}")
    mean_n = dist.mean()
    std_n = math.sqrt(max(dist.variance(), 0.0))
    return ell_p * mean_n, abs(ell_p) * std_n
