import math
from fractions import Fraction

import numpy as np
import pytest

from fecim.analysis import (
    DEFAULT_P_GRID,
    EnergyReport,
    area_report,
    average_ceq_ratio,
    energy_curves,
    mac_energy,
    match_count,
    onoff_error_samples,
    run_onoff_error_mc,
    run_onoff_error_sweep,
    run_sigma_mac_mc,
    sigma_mac_samples,
    sigma_mac_theory,
    sram_equivalent_capacitance,
    write_report,
)
from fecim.device import FeFetParams, VariationSpec
from fecim.errors import ConfigError
from fecim.macroarray import MacroArray, mac_evaluate, program_array

C_M = 1.2e-15


def test_sram_capacitance():
    assert sram_equivalent_capacitance(64, C_M) == pytest.approx(76.8e-15, rel=1e-14)
    assert sram_equivalent_capacitance(0, C_M) == 0


def test_half_point_ratio_exact():
    assert EnergyReport.at(64, 128, C_M, 0.45).ratio == 0.5


@pytest.mark.parametrize("n", [1, 2, 3, 16, 128, 1000])
def test_average_ratio_closed_form(n):
    assert average_ceq_ratio(n) == float(Fraction(n - 1, 3 * n))


def test_average_ratio_values():
    assert average_ceq_ratio(128) == pytest.approx(0.33073, abs=1e-5)
    assert average_ceq_ratio(1) == 0
    assert abs(average_ceq_ratio(10**5) - 1 / 3) < 1e-5


def test_mac_energy():
    assert mac_energy(38.4e-15, 0.45) == pytest.approx(7.776e-15, rel=1e-12)
    assert mac_energy(0.0, 0.9) == 0
    assert mac_energy(38.4e-15, 0.90) == pytest.approx(31.104e-15, rel=1e-12)
    assert mac_energy(38.4e-15, 0.90) == 4 * mac_energy(38.4e-15, 0.45)


def test_curve_shape():
    n = 128
    rows = energy_curves(n, C_M, 0.45)
    prop = np.array([r[2] for r in rows])
    sram = np.array([r[3] for r in rows])
    assert np.allclose(prop, prop[::-1], rtol=1e-14, atol=0)
    assert prop.argmax() == n // 2 and prop.max() == pytest.approx(n * C_M / 4, rel=1e-14)
    assert np.all(np.diff(sram) > 0)
    assert np.all(prop[1:] <= sram[1:])


def test_area_report():
    a = area_report()
    assert (a["proposed"]["transistors"], a["proposed"]["capacitors"]) == (2, 1)
    assert (a["sram_cd"]["transistors"], a["sram_cd"]["capacitors"]) == (9, 1)
    assert a["sram_cd"]["breakdown"] == {"xnor_cell": 8, "scl_access": 1}
    assert a["transistor_ratio"] == Fraction(2, 9)


def test_theory_values():
    assert sigma_mac_theory(0.5, 0.05, 128) == pytest.approx(0.0022097, abs=1e-7)
    assert sigma_mac_theory(0.5, 0.0, 128) == 0
    assert sigma_mac_theory(0.0, 0.05, 128) == sigma_mac_theory(1.0, 0.05, 128) == 0


def test_match_count_rounding():
    assert [match_count(p, 128) for p in DEFAULT_P_GRID] == [0, 13, 26, 38, 51, 64, 77, 90, 102, 115, 128]


def test_mc_kernel_agrees_with_mac_evaluate():
    # the Monte Carlo reuses the column kernel; check it against mac_evaluate on sampled arrays
    spec = VariationSpec(sigma_c=0.05, seed=4)
    n, m = 32, 12
    samples = sigma_mac_samples(spec, n, m, 5)
    from fecim.analysis import _block_keys, _cap_weights
    from fecim.rng import TAG_MC_CAP
    w = _cap_weights(0.05, _block_keys(4, TAG_MC_CAP, m, n, 0, 5))
    arr = program_array(MacroArray.blank(n, 5, FeFetParams()), np.ones((n, 5), dtype=np.int8))
    v = mac_evaluate(arr, (np.arange(n) < m).astype(np.int8), caps=w.T * C_M).v_scl / 0.45
    assert np.allclose(samples, v, rtol=1e-14, atol=0)


def test_sigma_mc_small_run_close_to_theory():
    rep = run_sigma_mac_mc(VariationSpec(sigma_c=0.05, seed=1), 128, (0.0, 0.3, 0.5), 20_000)
    assert rep.sigma_mac[0] == 0
    assert np.all(np.abs(rep.sigma_mac[1:] / rep.theory[1:] - 1) < 0.05)


def test_sigma_linear_in_sigma_c():
    # common random numbers: the 1% run is the 5% run scaled to first order
    a = run_sigma_mac_mc(VariationSpec(sigma_c=0.01, seed=2), 128, (0.5,), 20_000).sigma_mac[0]
    b = run_sigma_mac_mc(VariationSpec(sigma_c=0.05, seed=2), 128, (0.5,), 20_000).sigma_mac[0]
    assert a == pytest.approx(0.00044, rel=0.05)
    assert b / a == pytest.approx(5, rel=0.01)


def test_sigma_zero():
    rep = run_sigma_mac_mc(VariationSpec(sigma_c=0.0), 64, DEFAULT_P_GRID, 100)
    assert np.all(rep.sigma_mac == 0)


def test_mc_thread_invariance():
    spec = VariationSpec(sigma_c=0.05, sigma_r=0.15, seed=3)
    a = run_sigma_mac_mc(spec, 64, (0.2, 0.5), 9000, threads=1)
    b = run_sigma_mac_mc(spec, 64, (0.2, 0.5), 9000, threads=3)
    assert np.array_equal(a.sigma_mac, b.sigma_mac)
    e1 = run_onoff_error_sweep(spec, [1e2, 1e5], 64, (0.5,), 9000, threads=1)
    e3 = run_onoff_error_sweep(spec, [1e2, 1e5], 64, (0.5,), 9000, threads=4)
    for x, y in zip(e1, e3):
        assert np.array_equal(x.mean_abs_error, y.mean_abs_error)
        assert np.array_equal(x.q_below_one_flip, y.q_below_one_flip)


def test_sweep_equals_single_ratio_runs():
    spec = VariationSpec(sigma_c=0.05, sigma_r=0.15, seed=5)
    sweep = run_onoff_error_sweep(spec, [1e2, 1e4], 32, (0.25, 0.75), 3000)
    for rep, ratio in zip(sweep, (1e2, 1e4)):
        single = run_onoff_error_mc(VariationSpec(0.05, 0.15, ratio, 5), 32, (0.25, 0.75), 3000)
        assert np.array_equal(rep.mean_abs_error, single.mean_abs_error)


def test_ideal_error_zero():
    rep = run_onoff_error_mc(VariationSpec(0.0, 0.0, math.inf), 128, DEFAULT_P_GRID, 200)
    assert np.all(rep.mean_abs_error == 0) and np.all(rep.q_below_one_flip == 1)


def test_noiseless_ratio_100_systematic_error():
    # with no spread every matching cell sits at r_off/(r_on+r_off) and every other at r_on/(r_on+r_off)
    e = onoff_error_samples(VariationSpec(0.0, 0.0, None), [100.0], 128, 0, 3)
    assert np.allclose(e, 1 / 101, rtol=1e-12)
    e = onoff_error_samples(VariationSpec(0.0, 0.0, None), [100.0], 128, 64, 3)
    assert np.allclose(e, 0, atol=1e-15)


def test_error_decreases_with_ratio_small():
    ratios = [1e2, 1e3, 1e4, 1e5, 1e6]
    reps = run_onoff_error_sweep(VariationSpec(0.05, 0.15, None, 7), ratios, 128, (0.0, 0.2), 4000)
    errs = np.array([r.mean_abs_error for r in reps])
    assert np.all(np.diff(errs, axis=0) <= 0)


def test_validation():
    with pytest.raises(ConfigError):
        run_sigma_mac_mc(VariationSpec(sigma_c=0.05), 128, (1.5,), 100)
    with pytest.raises(ConfigError):
        run_onoff_error_mc(VariationSpec(sigma_c=0.05), 128, (0.5,), 100)


def test_reports_serialize(tmp_path):
    rep = run_sigma_mac_mc(VariationSpec(sigma_c=0.05, seed=1), 16, (0.5,), 50)
    write_report(rep, tmp_path / "s.csv", tmp_path / "s.json")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "p,M,sigma_c,sigma_mac,sigma_mac_theory,trials,seed"
    assert lines[1].startswith("0.5,8,0.050000000000000003,")
    err = run_onoff_error_mc(VariationSpec(0.05, 0.15, math.inf, 1), 16, (0.5,), 50)
    write_report(err, tmp_path / "e.csv", tmp_path / "e.json")
    assert ",inf," in (tmp_path / "e.csv").read_text()
