import math
from dataclasses import replace

import numpy as np
import pytest

from tdcqkd.characterize import characterize_line
from tdcqkd.montecarlo import (MCConfig, MonteCarloError, TagStream, TimeTag, Truth, apply_tdc,
                               export_tags, generate_events, import_tags, match_coincidences,
                               matcher_accidental_rate, params_from_mc, simulate,
                               validate_against_model)
from tdcqkd.qkd_metrics import accidental_rate
from tdcqkd.tdc_model import DelayLine, build_ideal, build_preset


def _stream(ts, ch="A"):
    n = len(ts)
    return TagStream(ch, np.asarray(ts), np.zeros(n), np.arange(n), np.zeros(n))


def test_dark_only_counts():
    a, b = generate_events(MCConfig(duration=10, pair_rate=0, dark_a=1000, dark_b=300, seed=1))
    assert abs(len(a) - 1e4) < 4 * 100
    assert abs(len(b) - 3e3) < 4 * math.sqrt(3e3)
    assert np.all(a.truth == Truth.DARK) and np.all(a.pair_id == -1)
    assert a.is_sorted() and b.is_sorted()


def test_noiseless_streams_identical():
    a, b = generate_events(MCConfig(duration=0.01, pair_rate=1e5, seed=2))
    assert np.array_equal(a.timestamps, b.timestamps)
    assert np.array_equal(a.pair_id, b.pair_id)


def test_survivor_pairs():
    a, b = generate_events(MCConfig(duration=1, pair_rate=1e5, transmission_a=0.5,
                                    transmission_b=0.4, seed=3))
    both = len(np.intersect1d(a.pair_id, b.pair_id))
    assert abs(both - 2e4) < 4 * math.sqrt(2e4)


def test_generation_deterministic():
    cfg = MCConfig(duration=0.05, pair_rate=1e6, transmission_a=0.3, transmission_b=0.6,
                   sigma_spd_a=50, sigma_spd_b=80, dark_a=1e4, dark_b=2e4, bit_error_prob=0.1, seed=4)
    a1, b1 = generate_events(cfg)
    a2, b2 = generate_events(cfg)
    assert a1.equals(a2) and b1.equals(b2)
    a3, _ = generate_events(MCConfig(**{**cfg.__dict__, "seed": 5}))
    assert not a1.equals(a3)


def test_bits_and_errors():
    cfg = MCConfig(duration=0.2, pair_rate=1e6, bit_error_prob=0.2, seed=6)
    a, b = generate_events(cfg)
    err = np.mean(a.bits != b.bits)
    assert err == pytest.approx(0.2, abs=4 * math.sqrt(0.2 * 0.8 / len(a)))


def test_config_validation():
    with pytest.raises(MonteCarloError):
        MCConfig(duration=1, pair_rate=1, transmission_a=1.5)
    with pytest.raises(MonteCarloError):
        MCConfig(duration=1, pair_rate=-1)
    with pytest.raises(MonteCarloError):
        MCConfig(duration=1, pair_rate=1, window=-1)
    with pytest.raises(MonteCarloError):
        MCConfig(duration=1, pair_rate=1, readout="magic")
    with pytest.raises(MonteCarloError):
        generate_events(MCConfig(duration=1, pair_rate=1, phase_mode="locked"))


def test_timetag_invariants():
    TimeTag("A", 5, Truth.SIGNAL, 3)
    TimeTag("B", 5, Truth.DARK)
    with pytest.raises(MonteCarloError):
        TimeTag("A", -1, Truth.DARK)
    with pytest.raises(MonteCarloError):
        TimeTag("A", 1, Truth.DARK, 4)
    with pytest.raises(MonteCarloError):
        TimeTag("A", 1, Truth.SIGNAL)
    s = _stream([1, 2])
    assert s[1] == TimeTag("A", 2, Truth.SIGNAL, 1, 0)


def test_apply_tdc_ideal_bound():
    line = build_ideal(100, 1000.0)
    s = _stream(np.sort(np.random.default_rng(0).integers(0, 10**9, 5000)))
    out = apply_tdc(s, line)
    # pair_id carries the original index through the re-sort
    assert np.max(np.abs(out.timestamps - s.timestamps[out.pair_id])) <= 5 + 1
    assert out.is_sorted()


def test_apply_tdc_wide_bin_error():
    taps = np.full(10, 10.0)
    taps[3] = 64.3
    line = DelayLine(tuple(taps), float(taps.sum()))
    lo, hi = line.edges[2], line.edges[3]
    s = _stream(np.arange(math.ceil(lo), math.ceil(hi)))
    out = apply_tdc(s, line)
    err = np.abs(out.timestamps - s.timestamps[out.pair_id])
    assert err.max() >= 32


def test_apply_tdc_empty_and_locked_offset():
    line = build_ideal(10, 100.0)
    assert len(apply_tdc(TagStream.empty("A"), line)) == 0
    s = _stream([1000, 2000, 3000])
    out = apply_tdc(s, line, "locked", phase_offset=55.0)
    # every phase is 0, shifted by 55 into bin 5 (centre 55): readout unchanged
    assert out.timestamps.tolist() == [1000, 2000, 3000]


def test_nominal_readout_exposes_inl():
    # intrinsic jitter off so only the deterministic readout error remains
    line = replace(build_preset("TDC1_RAW"), jitter_ps=0.0)
    s = _stream(np.arange(0, 10_000_000, 997))
    cal = apply_tdc(s, line, readout="calibrated")
    nom = apply_tdc(s, line, readout="nominal")
    rep = characterize_line(line)
    e_cal = np.abs(cal.timestamps - s.timestamps[cal.pair_id]).max()
    e_nom = np.abs(nom.timestamps - s.timestamps[nom.pair_id]).max()
    assert e_cal <= rep.bin_widths.max() / 2 + 1
    assert e_nom > 0.8 * rep.inl_range[1]


def test_match_identical_streams():
    a, b = generate_events(MCConfig(duration=0.01, pair_rate=2e5, seed=8))
    m = match_coincidences(a, b, 10.0, duration=0.01)
    assert m.detected_pairs == len(a)
    assert m.accidental_coincidences == 0
    assert m.eta_hat == 1.0


def test_match_window_zero_exact_only():
    a = _stream([10, 20, 30], "A")
    b = _stream([10, 21, 30], "B")
    m = match_coincidences(a, b, 0.0)
    ia, ib = m.matches
    assert ia.tolist() == [0, 2] and ib.tolist() == [0, 2]


def test_match_unsorted_rejected():
    with pytest.raises(MonteCarloError, match="sorted"):
        match_coincidences(_stream([3, 1]), _stream([1, 2]), 5.0)


def test_match_tie_goes_to_earlier_b():
    a = _stream([100], "A")
    b = _stream([95, 105], "B")
    ia, ib = match_coincidences(a, b, 10.0).matches
    assert ib.tolist() == [0]


def test_match_counts_partition():
    cfg = MCConfig(duration=0.05, pair_rate=1e6, transmission_a=0.5, transmission_b=0.5,
                   sigma_spd_a=200, sigma_spd_b=200, dark_a=2e5, dark_b=2e5, seed=9)
    a, b, m = simulate(cfg)
    assert m.matched_a + m.unmatched_a == len(a)
    assert m.matched_b + m.unmatched_b == len(b)
    assert m.true_coincidences_captured + m.accidental_coincidences == m.detected_pairs
    ia, ib = m.matches
    assert len(set(ia.tolist())) == len(ia) and len(set(ib.tolist())) == len(ib)


def test_accidentals_independent_streams():
    s_rate, w = 2e5, 1000.0
    cfg = MCConfig(duration=20, pair_rate=0, dark_a=s_rate, dark_b=s_rate, window=2 * w, seed=10)
    _, _, m = simulate(cfg)
    expect = matcher_accidental_rate(s_rate, s_rate, w)
    assert abs(m.c_acc_hat_cps - expect) < 3 * m.c_acc_se
    # model accidentals with the full window width
    assert m.c_acc_hat_cps == pytest.approx(accidental_rate(s_rate, s_rate, 2 * w), rel=0.15)


def test_eta_window_six_sigma():
    sig = 100.0
    # 10^6 pairs, sparse enough that neighbouring pairs never compete
    cfg = MCConfig(duration=10.0, pair_rate=1e5, sigma_spd_a=sig / math.sqrt(2),
                   sigma_spd_b=sig / math.sqrt(2), window=6 * sig, seed=11)
    rep = validate_against_model(cfg)
    assert rep["eta"]["model"] == pytest.approx(0.99730, abs=1e-5)
    assert abs(rep["eta"]["z"]) < 3


def test_qber_vanishes_without_errors():
    cfg = MCConfig(duration=0.05, pair_rate=2e5, sigma_spd_a=50, sigma_spd_b=50, window=2000, seed=12)
    _, _, m = simulate(cfg)
    assert m.qber_hat == 0.0


def test_params_from_mc_combines_arms():
    line = build_preset("TDC2_RAW")
    rep = characterize_line(line)
    cfg = MCConfig(duration=1, pair_rate=1e6, transmission_a=0.5, transmission_b=0.2,
                   sigma_spd_a=30, sigma_spd_b=40, tdc_a=line, tdc_b=line, window=500)
    p = params_from_mc(cfg)
    assert p.sigma_spd == pytest.approx(50.0)
    assert p.sigma_tdc == pytest.approx(math.sqrt(2) * rep.sigma_tdc)
    assert p.w_inl_pp == pytest.approx(2 * rep.w_inl_pp)
    assert p.c_true == pytest.approx(1e5)
    assert p.delta_t0 == 500


def test_validate_rejects_mismatched_window():
    cfg = MCConfig(duration=0.01, pair_rate=1e5, window=500)
    with pytest.raises(MonteCarloError):
        validate_against_model(cfg, params_from_mc(MCConfig(duration=0.01, pair_rate=1e5, window=400)))


def test_validate_reports_both_conventions():
    cfg = MCConfig(duration=0.05, pair_rate=0, dark_a=1e5, dark_b=1e5, window=1000, seed=13)
    rep = validate_against_model(cfg)
    c = rep["c_acc"]
    assert c["model_full_width"] == pytest.approx(2 * c["model_half_width"])
    assert "z_full_width" in c and "z_half_width" in c


def test_tags_roundtrip(tmp_path):
    cfg = MCConfig(duration=0.01, pair_rate=1e5, transmission_a=0.5, dark_a=1e4, dark_b=1e4,
                   bit_error_prob=0.5, seed=14)
    a, b = generate_events(cfg)
    export_tags((a, b), tmp_path / "t.csv", cfg)
    back = import_tags(tmp_path / "t.csv")
    assert back["A"].equals(a) and back["B"].equals(b)


def test_tags_malformed(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("channel,timestamp_ps,truth,pair_id,bit\nA,12,ghost,,0\n")
    with pytest.raises(MonteCarloError, match="malformed"):
        import_tags(p)


def test_line_jitter_is_seeded():
    line = replace(build_ideal(10, 100.0), jitter_ps=5.0)
    s = _stream(np.arange(0, 100_000, 7))
    a, b = apply_tdc(s, line, seed=1), apply_tdc(s, line, seed=1)
    assert a.equals(b)
    err = a.timestamps - s.timestamps[a.pair_id]
    assert np.std(err) == pytest.approx(math.hypot(5.0, 10 / math.sqrt(12)), rel=0.1)
