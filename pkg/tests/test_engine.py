import json
import math

import numpy as np
import pytest

from netsim import behavior, scenarios
from netsim.core import parse_scenario
from netsim.engine import (
    Action,
    ActionError,
    Engine,
    EpisodeError,
    EpisodeSpec,
    LinkSpec,
    Mode,
    RewardWeights,
    StackParams,
    env_reset,
    env_step,
    link_budget,
    region_aggregates,
    reward,
    run_coverage_sim,
    run_episode,
    run_link_channel_sim,
    run_protocol_stack_sim,
)
from netsim.channel import GridSpec


@pytest.fixture(scope="module")
def spec3(three_cell):
    return EpisodeSpec(three_cell, horizon_steps=4)


def test_reset_then_step_until_done(spec3):
    eng, first = env_reset(spec3)
    assert first.step == 0
    for k in range(4):
        frame, r, done = env_step(eng, None)
        assert frame.step == k and r == frame.reward
        assert done == (k == 3)
    with pytest.raises(EpisodeError):
        eng.step(None)


def test_step_before_reset(spec3):
    with pytest.raises(EpisodeError, match="no_episode"):
        Engine(spec3).step(None)


def test_episode_is_deterministic(spec3):
    a = [f.to_json() for f in run_episode(spec3)]
    b = [f.to_json() for f in run_episode(spec3)]
    assert a == b


def test_seed_changes_output(three_cell):
    a = run_episode(EpisodeSpec(three_cell, horizon_steps=2))
    b = run_episode(EpisodeSpec(three_cell.with_seed(99), horizon_steps=2))
    assert [f.to_json() for f in a] != [f.to_json() for f in b]


def test_aggregates_recompute_from_cells(spec3):
    for f in run_episode(spec3):
        assert region_aggregates(f.cells) == f.aggregates
        assert sum(c["camped"] for c in f.cells) == 60


def test_stack_rates_and_loads_bounded(spec3):
    for f in run_protocol_stack_sim(spec3):
        for c in f.cells:
            assert 0.0 <= c["load"] <= 1.0 and 0.0 <= c["ul_load"] <= 1.0
            assert c["dl_rate_bps"] >= 0 and c["connected"] <= c["camped"]


def test_coverage_mode_has_no_traffic(spec3):
    for f in run_coverage_sim(spec3):
        assert f.aggregates["total_traffic_bytes"] == 0.0


def test_full_buffer_drives_load_to_one():
    scn = parse_scenario(scenarios.single_cell_doc(n_users=2, full_buffer=True))
    frames = run_episode(EpisodeSpec(scn, horizon_steps=2))
    assert frames[-1].cells[0]["load"] == pytest.approx(1.0)
    assert frames[-1].aggregates["mean_user_rate_bps"] > 1e6


def test_zero_users():
    scn = parse_scenario(scenarios.reference_doc(n_users=0))
    for mode in ("stack", "coverage"):
        frames = run_episode(EpisodeSpec(scn, horizon_steps=2, mode=mode))
        assert frames[0].aggregates["total_users"] == 0
        assert frames[0].reward == 0.0


def test_per_step_action_schedule(three_cell):
    spec = EpisodeSpec(three_cell, horizon_steps=3, mode="coverage")
    base = Action.from_scenario(three_cell)
    tilted = base.with_value(1, range(8), "electrical_tilt", 14.0)
    frames = run_episode(spec, [None, tilted, None])
    plain = run_episode(spec)
    assert frames[0].to_json() == plain[0].to_json()
    assert frames[1].to_json() != plain[1].to_json()
    # the action persists until replaced
    assert frames[2].to_json() != plain[2].to_json()


def test_action_dict_roundtrip(three_cell):
    act = Action.from_scenario(three_cell).with_value(2, [0, 3], "h_beamwidth", 40.0)
    again = Action.from_dict(json.loads(json.dumps(act.to_dict())))
    assert again == act and again.digest() == act.digest()


def test_action_out_of_range_message(three_cell):
    doc = Action.from_scenario(three_cell).to_dict()
    doc["cells"][0]["beams"][2]["electrical_tilt"] = 20
    with pytest.raises(ActionError, match="cell 0 beam 2 electrical_tilt"):
        Action.from_dict(doc)


def test_action_must_cover_cells(three_cell):
    act = Action({0: Action.from_scenario(three_cell).beams[0]})
    with pytest.raises(ActionError, match="missing"):
        act.validate(three_cell)
    eng = Engine(EpisodeSpec(three_cell, horizon_steps=2))
    eng.reset()
    with pytest.raises(ActionError):
        eng.step(act)


def test_reward_normalisation():
    anchors = {"rsrp": (-120, -80), "sinr": (-5, 25), "users": (0, 10), "traffic": (0, 100), "rate": (0, 10)}
    agg = {"mean_rsrp_dbm": -100, "mean_sinr_db": 100, "total_users": 5, "total_traffic_bytes": -1,
           "mean_user_rate_bps": 5, "n_measured": 3}
    assert reward(agg, RewardWeights(), anchors) == pytest.approx(0.5 + 1.0 + 0.5 + 0.0 + 0.5)
    assert reward(agg, RewardWeights(0, 1, 0, 0, 0), anchors) == 1.0
    assert reward(agg, RewardWeights(2, 0, 0, 0, 0), anchors) == pytest.approx(1.0)


def test_sinr_only_weights_ignore_other_terms(three_cell):
    w = RewardWeights(0, 1, 0, 0, 0)
    f = run_episode(EpisodeSpec(three_cell, horizon_steps=1, mode="coverage", weights=w))[0]
    assert f.reward == pytest.approx(min(max((f.aggregates["mean_sinr_db"] + 5) / 30, 0), 1))


def test_weights_validation():
    with pytest.raises(ValueError):
        RewardWeights(0, 0, 0, 0, 0)
    with pytest.raises(ValueError):
        RewardWeights(-1, 1, 1, 1, 1)
    with pytest.raises(ValueError):
        RewardWeights.parse("1,2,3")
    assert RewardWeights.parse("1,0,0,0,2").as_tuple() == (1, 0, 0, 0, 2)


def test_spec_dict_roundtrip(three_cell):
    spec = EpisodeSpec(three_cell, horizon_steps=7, mode="coverage", stack=StackParams(policy="rr"))
    again = EpisodeSpec.from_dict(json.loads(json.dumps(spec.to_dict())))
    assert again.to_dict() == spec.to_dict()


def test_spec_from_path_and_seed_override(tmp_path, three_cell):
    from netsim.core import write_scenario

    write_scenario(three_cell, tmp_path / "s.json")
    spec = EpisodeSpec.from_dict({"scenario": "s.json", "seed_override": 5, "mode": "CoverageOnly"}, tmp_path)
    assert spec.scenario.master_seed == 5 and spec.mode is Mode.COVERAGE


def test_frame_json_is_compact_and_ordered(spec3):
    f = run_episode(spec3)[0]
    text = f.to_json()
    assert text.startswith('{"step":0,"reward":') and " " not in text


def test_per_user_records(three_cell):
    spec = EpisodeSpec(three_cell, horizon_steps=1, per_user=True)
    f = run_episode(spec)[0]
    assert len(f.users) == 60 and {"user_id", "cell_id", "sinr_db"} <= set(f.users[0])


def test_injected_trajectories(two_cell):
    traj = [behavior.stationary_trajectory(0, 150.0, 100.0, 3)]
    f = run_episode(EpisodeSpec(two_cell, horizon_steps=2, mode="coverage"), None, traj)
    assert f[0].cells[0]["camped"] == 1 and f[0].cells[1]["camped"] == 0


def test_link_budget_matches_coverage(three_cell):
    lb = link_budget(three_cell, LinkSpec(1, (700.0, 420.0)))
    assert lb["cell_index"] == 1 and lb["scenario_class"] == "UMa"
    with pytest.raises(ValueError):
        link_budget(three_cell, LinkSpec(9, (700.0, 420.0)))
    with pytest.raises(ValueError):
        link_budget(three_cell, LinkSpec(1, (-1.0, 0.0)))


def test_link_channel_power_tracks_budget(three_cell):
    link = LinkSpec(1, (700.0, 420.0), GridSpec(64, 2))
    lb = link_budget(three_cell, link)
    powers = [np.mean(np.abs(run_link_channel_sim(three_cell, LinkSpec(1, (700.0, 420.0), GridSpec(64, 2), draw=d)).values) ** 2)
              for d in range(300)]
    assert 10 * math.log10(np.mean(powers)) == pytest.approx(lb["net_gain_db"], abs=0.3)
