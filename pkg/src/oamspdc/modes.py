"""Laguerre-Gaussian modes, transverse overlap integrals, and SPDC mode weights.

Modes are evaluated in their common waist plane, where a normalized LG mode
with radial index p, topological charge ell, and waist w0 is

    u(rho, phi) = N (sqrt(2) rho / w0)^|ell| L_p^|ell|(2 rho^2 / w0^2)
                  exp(-rho^2 / w0^2) exp(i ell phi),
    N = sqrt(2 p! / (pi (p + |ell|)!)) / w0,

so that the transverse intensity integrates to one.  The pump-signal-idler
coupling amplitude is the transverse inner product

    overlap = integral d^2rho  u_pump u_signal* u_idler*,

whose azimuthal part vanishes identically unless ell_p = ell_s + ell_i; the
surviving radial integral is a polynomial times a Gaussian and is evaluated
with Gauss-Laguerre quadrature.  The longitudinal phase-matching amplitude
over a crystal of length L is the plane-wave integral L e^{i dk L/2}
sinc(dk L / 2).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import eval_genlaguerre, roots_laguerre

from .errors import NumericalError, ParameterError

__all__ = [
    "LGModeSpec",
    "PhaseMatchParams",
    "ModeWeightTable",
    "eval_lg",
    "overlap_integral",
    "phasematch_amplitude",
    "spdc_mode_weights",
]


@dataclass(frozen=True)
class LGModeSpec:
    """One Laguerre-Gaussian mode: radial index, topological charge, waist (m)."""

    p: int
    ell: int
    w0: float

    def __post_init__(self):
        if int(self.p) != self.p or self.p < 0:
            raise ParameterError(f"radial index p must be a non-negative integer, got {self.p}")
        if int(self.ell) != self.ell:
            raise ParameterError(f"topological charge ell must be an integer, got {self.ell}")
        if not (self.w0 > 0):
            raise ParameterError(f"beam waist w0 must be positive, got {self.w0}")


@dataclass(frozen=True)
class PhaseMatchParams:
    """Wave-vector mismatch (rad/m, signed) and crystal length (m)."""

    delta_k: float
    crystal_length: float

    def __post_init__(self):
        if not (self.crystal_length > 0):
            raise ParameterError(f"crystal_length must be positive, got {self.crystal_length}")


@dataclass
class ModeWeightTable:
    """Normalized coupling weights over a grid of (signal, idler) mode pairs.

    Keys are ((p_s, ell_s), (p_i, ell_i)); entries violating the azimuthal
    selection rule carry weight exactly 0.
    """

    pump: LGModeSpec
    entries: dict = field(default_factory=dict)
    normalized: bool = False

    def total(self):
        return sum(self.entries.values())

    def sorted_items(self):
        """Entries in the fixed export order: sorted by (p_s, ell_s, p_i, ell_i)."""
        return sorted(self.entries.items(), key=lambda kv: (kv[0][0], kv[0][1]))

    def validate(self):
        for (ks, ki), w in self.entries.items():
            if w < 0:
                raise ParameterError(f"negative weight for {(ks, ki)}")
            if ks[1] + ki[1] != self.pump.ell and w != 0.0:
                raise ParameterError(
                    f"selection rule violated: cell {(ks, ki)} has weight {w} "
                    f"but ell_s + ell_i != {self.pump.ell}"
                )
        if self.normalized and abs(self.total() - 1.0) > 1e-12:
            raise ParameterError(f"normalized table sums to {self.total()!r}, not 1")

    def write_csv(self, destination):
        """Export as CSV with 12-significant-digit scientific weights."""

        def _dump(fh):
            writer = csv.writer(fh)
            writer.writerow(["p_s", "ell_s", "p_i", "ell_i", "weight"])
            for ((p_s, ell_s), (p_i, ell_i)), w in self.sorted_items():
                writer.writerow([p_s, ell_s, p_i, ell_i, f"{w:.11e}"])

        if hasattr(destination, "write"):
            _dump(destination)
        else:
            with open(destination, "w", newline="") as fh:
                _dump(fh)


def _radial_prefactor(mode: LGModeSpec):
    a = abs(mode.ell)
    return math.sqrt(2.0 * math.factorial(mode.p) / (math.pi * math.factorial(mode.p + a))) / mode.w0


def _radial_profile_bare(mode: LGModeSpec, rho):
    """Radial profile without the Gaussian envelope exp(-rho^2/w0^2)."""
    a = abs(mode.ell)
    x = 2.0 * np.asarray(rho) ** 2 / mode.w0**2
    return _radial_prefactor(mode) * (np.sqrt(2.0) * np.asarray(rho) / mode.w0) ** a * eval_genlaguerre(mode.p, a, x)


def eval_lg(mode: LGModeSpec, rho, phi):
    """Evaluate the normalized LG mode at radius rho (m) and angle phi (rad).

    Accepts scalars or numpy arrays; returns complex values.  The azimuthal
    dependence is exactly exp(i ell phi) times a real radial profile.
    """
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0):
        raise ParameterError("rho must be non-negative")
    radial = _radial_profile_bare(mode, rho) * np.exp(-(rho**2) / mode.w0**2)
    out = radial * np.exp(1j * mode.ell * np.asarray(phi, dtype=float))
    if out.ndim == 0:
        return complex(out)
    return out


def phasematch_amplitude(params: PhaseMatchParams):
    """Plane-wave phase-matching amplitude integral over the crystal length.

    Returns L e^{i dk L / 2} sinc(dk L / 2) with sinc(x) = sin(x)/x, sinc(0) = 1.
    """
    L = params.crystal_length
    x = 0.5 * params.delta_k * L
    sinc = 1.0 if x == 0 else math.sin(x) / x
    return L * complex(math.cos(x), math.sin(x)) * sinc


def _radial_overlap_quadrature(pump, signal, idler, rel_tol, max_nodes, start_nodes=16):
    """Radial part of the overlap after the analytic azimuthal integral.

    Substituting t = a rho^2 with a = sum_j 1/w_j^2 absorbs the combined
    Gaussian envelope into the Gauss-Laguerre weight e^{-t}; the remaining
    integrand is a polynomial in t, so doubling the node count until two
    successive estimates agree resolves it exactly long before the cap.
    """
    a = 1.0 / pump.w0**2 + 1.0 / signal.w0**2 + 1.0 / idler.w0**2

    def estimate(n):
        t, w = roots_laguerre(n)
        rho = np.sqrt(t / a)
        f = (
            _radial_profile_bare(pump, rho)
            * _radial_profile_bare(signal, rho)
            * _radial_profile_bare(idler, rho)
        )
        return 2.0 * math.pi * float(np.dot(w, f)) / (2.0 * a)

    n = start_nodes
    prev = estimate(n)
    achieved = math.inf
    while n < max_nodes:
        n *= 2
        cur = estimate(n)
        scale = max(abs(cur), abs(prev), 1e-300)
        achieved = abs(cur - prev) / scale
        if achieved <= rel_tol:
            return cur
        prev = cur
    raise NumericalError(
        f"radial quadrature did not converge to {rel_tol:g} within {max_nodes} nodes "
        f"(achieved {achieved:.3e})",
        estimate=prev,
        error_estimate=achieved,
    )


def overlap_integral(pump: LGModeSpec, signal: LGModeSpec, idler: LGModeSpec,
                     rel_tol=1e-10, max_nodes=4096):
    """Transverse overlap of the pump mode with the signal-idler mode product.

    Exactly 0 (analytically, no quadrature) when ell_p != ell_s + ell_i.
    Otherwise evaluated by converged Gauss-Laguerre quadrature of the reduced
    radial integral; raises NumericalError carrying the achieved error if the
    node cap is hit first.
    """
    if pump.ell != signal.ell + idler.ell:
        return 0j
    return complex(_radial_overlap_quadrature(pump, signal, idler, rel_tol, max_nodes))


def spdc_mode_weights(pump: LGModeSpec, signal_idler_waist: float, p_max: int,
                      ell_range, phasematch: PhaseMatchParams,
                      normalized=True, rel_tol=1e-10, max_nodes=4096):
    """Coupling-weight table over signal/idler modes with a shared waist.

    ell_range is an inclusive (min, max) pair of topological charges; the grid
    is every (p_s, ell_s, p_i, ell_i) with p <= p_max.  Each weight is
    |overlap * phasematch|^2, normalized over the table unless disabled.
    Selection-rule-violating cells are exactly 0.
    """
    if p_max < 0:
        raise ParameterError(f"p_max must be non-negative, got {p_max}")
    ell_lo, ell_hi = int(ell_range[0]), int(ell_range[1])
    if ell_hi < ell_lo:
        raise ParameterError(f"empty ell_range {ell_range}")
    if not (signal_idler_waist > 0):
        raise ParameterError("signal_idler_waist must be positive")

    pm = phasematch_amplitude(phasematch)
    ells = range(ell_lo, ell_hi + 1)
    entries = {}
    for p_s in range(p_max + 1):
        for ell_s in ells:
            for p_i in range(p_max + 1):
                for ell_i in ells:
                    signal = LGModeSpec(p_s, ell_s, signal_idler_waist)
                    idler = LGModeSpec(p_i, ell_i, signal_idler_waist)
                    lam = overlap_integral(pump, signal, idler, rel_tol=rel_tol, max_nodes=max_nodes)
                    entries[((p_s, ell_s), (p_i, ell_i))] = abs(lam * pm) ** 2

    table = ModeWeightTable(pump=pump, entries=entries, normalized=False)
    if normalized:
        total = table.total()
        if total <= 0:
            raise ParameterError(
                "no mode pair in the requested grid satisfies the selection rule; "
                "cannot normalize an all-zero table"
            )
        table.entries = {k: v / total for k, v in entries.items()}
        # Exact unit sum despite rounding: fold the residual into the largest cell.
        residual = 1.0 - sum(table.entries.values())
        if residual != 0.0:
            kmax = max(table.entries, key=table.entries.get)
            table.entries[kmax] += residual
        table.normalized = True
    table.validate()
    return table
