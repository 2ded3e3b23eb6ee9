import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netsim import radio, scenarios
from netsim.core import BeamConfig, CellConfig, parse_scenario, rng_stream

import oracle

CELL = CellConfig(cell_id=0, mechanical_azimuth=30.0, max_gain=17.0)


def test_gain_at_boresight_is_max():
    beam = BeamConfig(azimuth_offset=10.0, electrical_tilt=6.0)
    assert radio.beam_gain(beam, CELL, 40.0, 6.0) == 17.0


def test_gain_half_beamwidth_minus_three():
    beam = BeamConfig(azimuth_offset=0.0, electrical_tilt=4.0, h_beamwidth=20.0, v_beamwidth=8.0)
    assert radio.beam_gain(beam, CELL, 40.0, 4.0) == pytest.approx(14.0, abs=1e-12)
    assert radio.beam_gain(beam, CELL, 30.0, 8.0) == pytest.approx(14.0, abs=1e-12)


def test_gain_floor():
    beam = BeamConfig()
    assert radio.beam_gain(beam, CELL, 210.0, 6.0) == -13.0
    # both planes partially down still floors at 30 dB total
    assert radio.beam_gain(beam, CELL, 30.0 + 30.0, 6.0 + 11.0) == -13.0


def test_wraparound_azimuth():
    beam = BeamConfig()
    c = CellConfig(cell_id=0, mechanical_azimuth=355.0)
    assert radio.beam_gain(beam, c, 5.0, 6.0) == radio.beam_gain(beam, c, 345.0, 6.0)
    assert radio.wrap_deg(540.0) == 180.0 and radio.wrap_deg(-180.0) == 180.0


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 360), st.floats(-90, 90), st.floats(-60, 60), st.floats(0, 15), st.floats(5, 65), st.floats(3, 20))
def test_gain_matches_scalar_oracle(az, el, off, tilt, hbw, vbw):
    beam = BeamConfig(off, tilt, hbw, vbw)
    ref = oracle.pattern_db(CELL.max_gain, CELL.mechanical_azimuth + off, tilt, hbw, vbw, az, el)
    g = radio.beam_gain(beam, CELL, az, el)
    assert g == pytest.approx(ref, abs=1e-9)
    assert CELL.max_gain - 30.0 <= g <= CELL.max_gain


def test_path_loss_hand_value():
    m = radio.PathLossModel()
    loss, sh = radio.path_loss(m, "UMa", 100.0, 3.5)
    assert loss == pytest.approx(28.0 + 22.0 * 2 + 20.0 * math.log10(3.5))
    assert sh == 0.0


def test_path_loss_monotone_in_distance():
    m = radio.PathLossModel()
    d = np.linspace(1, 5000, 200)
    assert np.all(np.diff(m.raw("UMi", d, 3.5)) > 0)


def test_path_loss_rejects_short_distance():
    with pytest.raises(ValueError):
        radio.path_loss(radio.PathLossModel(), "UMa", 0.5, 3.5)


def test_shadowing_sample_has_class_sigma():
    m = radio.PathLossModel()
    rng = rng_stream(0, "t")
    s = np.array([radio.path_loss(m, "Indoor", 50.0, 3.5, rng)[1] for _ in range(20000)])
    assert abs(s.std() - 8.0) < 0.15


def test_best_beam_validation():
    assert radio.best_beam([0, 1, 5, 2, 5, 0, 0, 0]) == 2
    with pytest.raises(ValueError):
        radio.best_beam([0.0] * 7)
    with pytest.raises(ValueError):
        radio.best_beam([0.0] * 7 + [float("nan")])


def test_sinr_noise_only_and_with_interference():
    assert radio.sinr(-90.0, [], -120.0, []) == pytest.approx(30.0)
    # equal-power interferer at full load dominates noise
    assert radio.sinr(-90.0, [-90.0], -200.0, [1.0]) == pytest.approx(0.0, abs=1e-9)
    assert radio.sinr(-90.0, [-90.0], -200.0, [0.0]) == pytest.approx(110.0, abs=1e-6)
    with pytest.raises(ValueError):
        radio.sinr(-90.0, [-90.0], -120.0, [])


def test_coverage_matches_oracle(three_cell):
    rng = np.random.default_rng(1)
    w, h = three_cell.region.extent
    pts = np.column_stack([rng.uniform(0, w, 40), rng.uniform(0, h, 40)])
    cov = radio.coverage_frame(three_cell, pts)
    ref_rsrp, ref_sinr = oracle.coverage(three_cell, pts)
    assert np.max(np.abs(cov.rsrp - np.array(ref_rsrp))) < 1e-9
    assert np.max(np.abs(cov.sinr - np.array(ref_sinr))) < 1e-9


def test_serving_is_global_argmax(three_cell):
    x, y = three_cell.region.grid_centers()
    cov = radio.coverage_frame(three_cell, np.column_stack([x, y])[:200])
    flat = cov.rsrp.reshape(len(cov.sinr), -1)
    assert np.array_equal(flat.argmax(1), cov.serving_cell * 8 + cov.serving_beam)
    assert np.array_equal(cov.serving_rsrp, flat.max(1))


def test_shadowing_frozen_per_raster_cell(three_cell):
    a = radio.coverage_frame(three_cell, [[101.0, 101.0], [500.0, 500.0]])
    b = radio.coverage_frame(three_cell, [[500.0, 500.0]])
    assert np.array_equal(a.rsrp[1], b.rsrp[0])


def test_clutter_adds_fixed_loss():
    doc = scenarios.single_cell_doc()
    open_scn = parse_scenario(doc)
    doc["region"]["clutter"] = [[1] * 40 for _ in range(40)]
    dense = parse_scenario(doc)
    p = [[300.0, 350.0]]
    diff = radio.coverage_frame(open_scn, p).rsrp - radio.coverage_frame(dense, p).rsrp
    assert np.allclose(diff, 15.0)


def test_action_beams_override(three_cell):
    from netsim.engine import Action

    act = Action.from_scenario(three_cell).with_value(0, range(8), "electrical_tilt", 12.0)
    p = [[400.0, 400.0]]
    base = radio.coverage_frame(three_cell, p)
    new = radio.coverage_frame(three_cell, p, act)
    assert not np.array_equal(base.rsrp[0, 0], new.rsrp[0, 0])
    assert np.array_equal(base.rsrp[0, 1:], new.rsrp[0, 1:])


def test_empty_points_rejected(three_cell):
    with pytest.raises(ValueError):
        radio.coverage_frame(three_cell, np.zeros((0, 2)))
    with pytest.raises(ValueError):
        radio.coverage_frame(three_cell, [])


def test_calibration_recovers_affine():
    m = radio.PathLossModel()
    meas = [(d, 3.5, "UMa", 1.1 * float(m.raw("UMa", d, 3.5)) - 4.0) for d in (30, 80, 200, 600, 1500)]
    cal = radio.calibrate(m, meas)
    assert cal.a == pytest.approx(1.1) and cal.b == pytest.approx(-4.0)


def test_calibration_degenerate():
    m = radio.PathLossModel()
    with pytest.raises(ValueError):
        radio.calibrate(m, [(100, 3.5, "UMa", 120.0)])
    with pytest.raises(ValueError):
        radio.calibrate(m, [(100, 3.5, "UMa", 120.0), (100, 3.5, "UMa", 121.0)])
