"""Mode evaluation, overlap integrals, phase matching, and weight tables."""

import io
import math

import numpy as np
import pytest

from oamspdc.errors import NumericalError, ParameterError
from oamspdc.modes import (
    LGModeSpec,
    ModeWeightTable,
    PhaseMatchParams,
    eval_lg,
    overlap_integral,
    phasematch_amplitude,
    spdc_mode_weights,
)

from oracles import mode_norm_2d, overlap_2d_cartesian, overlap_2d_polar


class TestEvalLG:
    def test_gaussian_peak(self):
        # Normalized fundamental Gaussian peaks at sqrt(2/pi)/w0.
        val = eval_lg(LGModeSpec(0, 0, 1.0), 0.0, 0.0)
        assert val == pytest.approx(math.sqrt(2.0 / math.pi), rel=1e-14)

    def test_vortex_core_is_dark(self):
        for phi in (0.0, 1.0, 4.0):
            assert eval_lg(LGModeSpec(0, 1, 1.0), 0.0, phi) == 0

    def test_azimuthal_phase_structure(self):
        m = LGModeSpec(0, 2, 1.0)
        v0 = eval_lg(m, 1.0, 0.0)
        v1 = eval_lg(m, 1.0, math.pi / 4)
        assert abs(v1) == pytest.approx(abs(v0), rel=1e-14)
        assert v1 == pytest.approx(v0 * np.exp(1j * 2 * math.pi / 4), rel=1e-14)

    @pytest.mark.parametrize("p,ell,w0", [(0, 0, 1.0), (1, 0, 0.7), (0, 3, 1.3), (2, -2, 2.0)])
    def test_unit_norm(self, p, ell, w0):
        assert mode_norm_2d(LGModeSpec(p, ell, w0)) == pytest.approx(1.0, abs=1e-9)

    def test_invalid_specs_rejected(self):
        with pytest.raises(ParameterError):
            LGModeSpec(-1, 0, 1.0)
        with pytest.raises(ParameterError):
            LGModeSpec(0, 0, 0.0)
        with pytest.raises(ParameterError):
            eval_lg(LGModeSpec(0, 0, 1.0), -0.5, 0.0)


class TestOverlapIntegral:
    def test_selection_rule_short_circuit(self):
        val = overlap_integral(
            LGModeSpec(0, 0, 1.0), LGModeSpec(0, 1, 1.0), LGModeSpec(0, 1, 1.0)
        )
        assert val == 0j  # exact zero, not quadrature-small

    def test_selection_rule_grid(self):
        # Every non-conserving charge combination is exactly zero.
        for lp in range(-3, 4):
            for ls in range(-3, 4):
                for li in range(-3, 4):
                    if lp == ls + li:
                        continue
                    val = overlap_integral(
                        LGModeSpec(1, lp, 1.3), LGModeSpec(0, ls, 0.9), LGModeSpec(2, li, 1.1)
                    )
                    assert val == 0j

    def test_three_gaussian_closed_form(self):
        # p = ell = 0 for all three modes has an elementary closed form.
        wp, ws, wi = 2.4, 1.0, 0.8
        a = 1 / wp**2 + 1 / ws**2 + 1 / wi**2
        closed = (2 / math.pi) ** 1.5 * math.pi / (wp * ws * wi * a)
        val = overlap_integral(LGModeSpec(0, 0, wp), LGModeSpec(0, 0, ws), LGModeSpec(0, 0, wi))
        assert val.real == pytest.approx(closed, rel=1e-12)
        assert val.imag == 0
        two_d = overlap_2d_cartesian(
            LGModeSpec(0, 0, wp), LGModeSpec(0, 0, ws), LGModeSpec(0, 0, wi)
        )
        assert val.real == pytest.approx(two_d, rel=1e-9)

    def test_high_charge_pump_against_cartesian_oracle(self):
        # The widest waist-ratio setting: charge-2 pump, unit signal/idler waists.
        pump = LGModeSpec(0, 2, 4.3)
        signal = LGModeSpec(0, 1, 1.0)
        idler = LGModeSpec(0, 1, 1.0)
        val = overlap_integral(pump, signal, idler)
        assert val.imag == 0
        assert val.real != 0
        assert val.real == pytest.approx(overlap_2d_cartesian(pump, signal, idler), rel=1e-9)

    def test_matches_polar_2d_oracle_on_random_triples(self, rng):
        for _ in range(6):
            ls, li = int(rng.integers(-3, 4)), int(rng.integers(-3, 4))
            pump = LGModeSpec(int(rng.integers(0, 3)), ls + li, 1.0 + 3.0 * rng.random())
            signal = LGModeSpec(int(rng.integers(0, 3)), ls, 0.5 + rng.random())
            idler = LGModeSpec(int(rng.integers(0, 3)), li, 0.5 + rng.random())
            val = overlap_integral(pump, signal, idler).real
            ref = overlap_2d_polar(pump, signal, idler)
            assert val == pytest.approx(ref, rel=1e-9, abs=1e-15)

    def test_signal_idler_exchange_symmetry(self, rng):
        for _ in range(5):
            ls, li = int(rng.integers(-2, 3)), int(rng.integers(-2, 3))
            w_si = 0.5 + rng.random()
            pump = LGModeSpec(0, ls + li, 1.0 + rng.random())
            a = overlap_integral(pump, LGModeSpec(1, ls, w_si), LGModeSpec(0, li, w_si))
            b = overlap_integral(pump, LGModeSpec(0, li, w_si), LGModeSpec(1, ls, w_si))
            assert a == pytest.approx(b, rel=1e-12)

    def test_node_cap_raises_with_estimate(self):
        # A cap at the starting node count leaves no room to verify convergence.
        with pytest.raises(NumericalError) as err:
            overlap_integral(
                LGModeSpec(0, 0, 1.0),
                LGModeSpec(0, 0, 1.0),
                LGModeSpec(0, 0, 1.0),
                max_nodes=16,
            )
        assert err.value.estimate is not None


class TestPhaseMatch:
    def test_perfect_matching_returns_length(self):
        amp = phasematch_amplitude(PhaseMatchParams(0.0, 0.025))
        assert amp == 0.025

    def test_first_zero(self):
        L = 0.025
        amp = phasematch_amplitude(PhaseMatchParams(2 * math.pi / L, L))
        assert abs(amp) == pytest.approx(0.0, abs=1e-17)

    def test_half_period_magnitude(self):
        # |integral_0^L e^{i pi z / L} dz| = 2 L / pi; frozen from the direct
        # numerical integration oracle below.
        L = 0.025
        amp = phasematch_amplitude(PhaseMatchParams(math.pi / L, L))
        assert abs(amp) == pytest.approx(L * 2 / math.pi, rel=1e-12)

    def test_against_direct_integration(self, rng):
        L = 0.025
        z = np.linspace(0.0, L, 200001)
        for _ in range(5):
            dk = rng.uniform(-3000, 3000)
            direct = np.trapezoid(np.exp(1j * dk * z), z)
            amp = phasematch_amplitude(PhaseMatchParams(dk, L))
            assert amp == pytest.approx(direct, rel=1e-8)
            assert abs(amp) <= L + 1e-15

    def test_invalid_length(self):
        with pytest.raises(ParameterError):
            PhaseMatchParams(0.0, 0.0)


class TestModeWeights:
    PM = PhaseMatchParams(0.0, 0.025)

    def test_fundamental_pump_spectrum(self):
        table = spdc_mode_weights(LGModeSpec(0, 0, 2.4), 1.0, 0, (-1, 1), self.PM)
        nonzero = {(ks[1], ki[1]): w for (ks, ki), w in table.entries.items() if w > 0}
        assert set(nonzero) == {(0, 0), (1, -1), (-1, 1)}
        assert nonzero[(0, 0)] == max(nonzero.values())
        assert nonzero[(1, -1)] == pytest.approx(nonzero[(-1, 1)], rel=1e-12)

    def test_negative_charge_pump(self):
        table = spdc_mode_weights(LGModeSpec(0, -1, 3.3), 1.0, 0, (-1, 1), self.PM)
        nonzero = {(ks[1], ki[1]) for (ks, ki), w in table.entries.items() if w > 0}
        assert nonzero == {(0, -1), (-1, 0)}

    def test_charge_two_pump(self):
        table = spdc_mode_weights(LGModeSpec(0, 2, 4.3), 1.0, 0, (-1, 1), self.PM)
        nonzero = {(ks[1], ki[1]) for (ks, ki), w in table.entries.items() if w > 0}
        assert nonzero == {(1, 1)}

    def test_normalization_is_exact(self):
        table = spdc_mode_weights(LGModeSpec(0, 0, 2.4), 1.0, 1, (-2, 2), self.PM)
        assert table.normalized
        assert table.total() == pytest.approx(1.0, abs=1e-12)
        table.validate()

    def test_weights_scale_invariant(self):
        # Only the waist ratio matters once the table is normalized.
        t1 = spdc_mode_weights(LGModeSpec(0, 0, 2.4), 1.0, 0, (-1, 1), self.PM)
        t2 = spdc_mode_weights(LGModeSpec(0, 0, 2.4e-5), 1.0e-5, 0, (-1, 1), self.PM)
        for key in t1.entries:
            assert t1.entries[key] == pytest.approx(t2.entries[key], rel=1e-9, abs=1e-15)

    def test_empty_range_rejected(self):
        with pytest.raises(ParameterError):
            spdc_mode_weights(LGModeSpec(0, 0, 2.4), 1.0, 0, (1, -1), self.PM)

    def test_csv_export_format(self):
        table = spdc_mode_weights(LGModeSpec(0, 0, 2.4), 1.0, 0, (-1, 1), self.PM)
        buf = io.StringIO()
        table.write_csv(buf)
        lines = buf.getvalue().strip().splitlines()
        assert lines[0] == "p_s,ell_s,p_i,ell_i,weight"
        assert len(lines) == 1 + 9
        for line in lines[1:]:
            weight = line.split(",")[-1]
            mantissa, _, _ = weight.partition("e")
            assert len(mantissa.replace("-", "").replace(".", "")) == 12

    def test_selection_rule_validation(self):
        table = ModeWeightTable(
            pump=LGModeSpec(0, 0, 1.0),
            entries={((0, 1), (0, 1)): 0.5, ((0, 0), (0, 0)): 0.5},
        )
        with pytest.raises(ParameterError):
            table.validate()
