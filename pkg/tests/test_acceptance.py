"""Acceptance criteria, each reported as one PASS/FAIL line in the run summary."""

import json
import math
import threading
import time
from pathlib import Path

import numpy as np

from netsim import behavior, channel, radio, scenarios, stack
from netsim.channel import GridSpec, MultipathProfile
from netsim.cli import main as cli_main
from netsim.core import BeamConfig, CellConfig, parse_scenario, rng_stream, write_scenario
from netsim.engine import Action, EpisodeSpec, StackParams, run_episode
from netsim.optimize import Objective, SearchSpace, exhaustive_search, local_search_optimize
from netsim.service import Client, make_server

import oracle

ROOT = Path(__file__).resolve().parent.parent
RESULTS: list[str] = []


def record(n, title, ok, detail):
    RESULTS.append(f"[{'PASS' if ok else 'FAIL'}] {n}. {title}: {detail}")
    assert ok, detail


def test_1_coverage_oracle_equivalence(three_cell):
    rng = np.random.default_rng(2024)
    w, h = three_cell.region.extent
    pts = np.column_stack([rng.uniform(0, w, 100), rng.uniform(0, h, 100)])
    t0 = time.perf_counter()
    cov = radio.coverage_frame(three_cell, pts)
    dt = time.perf_counter() - t0
    ref_rsrp, ref_sinr = oracle.coverage(three_cell, pts)
    e_rsrp = float(np.max(np.abs(cov.rsrp - np.array(ref_rsrp))))
    e_sinr = float(np.max(np.abs(cov.sinr - np.array(ref_sinr))))
    ok = e_rsrp < 1e-9 and e_sinr < 1e-9 and dt < 1.0
    record(1, "coverage oracle equivalence", ok,
           f"max |dRSRP|={e_rsrp:.2e} dB, max |dSINR|={e_sinr:.2e} dB over 100x3x8, {dt * 1e3:.1f} ms")


def test_2_pattern_arithmetic():
    rng = np.random.default_rng(7)
    n = 10_000
    worst_3db, floor_bad = 0.0, 0
    for _ in range(n):
        mech, off = rng.uniform(0, 360), rng.uniform(-60, 60)
        tilt, hbw, vbw, gmax = rng.uniform(0, 15), rng.uniform(5, 65), rng.uniform(3, 20), rng.uniform(0, 25)
        cell = CellConfig(cell_id=0, mechanical_azimuth=mech, max_gain=gmax)
        beam = BeamConfig(off, tilt, hbw, vbw)
        bore = mech + off
        side = rng.choice([-1.0, 1.0])
        g_h = radio.beam_gain(beam, cell, bore + side * hbw / 2, tilt)
        g_v = radio.beam_gain(beam, cell, bore, tilt + side * vbw / 2)
        worst_3db = max(worst_3db, abs(g_h - (gmax - 3.0)), abs(g_v - (gmax - 3.0)))
        # beyond sqrt(30/12) beamwidths in either plane the pattern is floored
        far_h = radio.beam_gain(beam, cell, bore + side * hbw * rng.uniform(1.6, 180 / hbw), tilt)
        far_v = radio.beam_gain(beam, cell, bore, tilt + side * vbw * rng.uniform(1.6, 5.0))
        floor_bad += far_h != gmax - 30.0
        floor_bad += far_v != gmax - 30.0
    ok = worst_3db < 1e-9 and floor_bad == 0
    record(2, "pattern arithmetic", ok,
           f"{n} cases, max |gain(hbw/2)-(G-3)|={worst_3db:.2e} dB, floor mismatches={floor_bad}")


def test_3_channel_normalisation_and_dft():
    t0 = time.perf_counter()
    K, draws = 72, 10_000
    grid = GridSpec(K, 1, 30e3)
    prof = MultipathProfile("UMa", n_taps=8, delay_spread=300e-9)
    rng = rng_stream(1, "acceptance/normalisation")
    acc = np.zeros((K, 1, 2, 2))
    for _ in range(draws):
        h = channel.freq_response(channel.draw_multipath(prof, 2, 2, rng), grid).values
        acc += np.abs(h) ** 2
    per_re = acc / draws
    mean_power = float(per_re.mean())
    # DFT oracle on on-grid delays
    worst = 0.0
    for d in range(50):
        taps = channel.draw_multipath(prof, 2, 2, rng)
        bins = np.sort(rng.choice(K, prof.n_taps, replace=False))
        taps.delays = bins / (K * grid.spacing)
        imp = np.zeros((K, 2, 2), complex)
        np.add.at(imp, bins, taps.gains)
        h = channel.freq_response(taps, grid).values[:, 0]
        worst = max(worst, float(np.max(np.abs(h - np.fft.fft(imp, axis=0)))))
    dt = time.perf_counter() - t0
    ok = 0.99 <= mean_power <= 1.01 and worst < 1e-9 and dt < 30
    record(3, "channel normalisation and DFT oracle", ok,
           f"ensemble mean RE power={mean_power:.4f} (per-RE range {per_re.min():.3f}..{per_re.max():.3f}), "
           f"DFT max err={worst:.2e}, {dt:.1f} s")


def test_4_csi_monotonicity():
    budgets = (16, 32, 64, 128, 256)
    prof = MultipathProfile("UMa", n_taps=4, delay_spread=3e-6)
    rng = rng_stream(4, "acceptance/csi")
    grid = GridSpec(4, 1, 30e3)
    violations, worst_lossless = 0, 0.0
    for _ in range(100):
        h = channel.freq_response(channel.draw_multipath(prof, 1, 1, rng), grid)
        nmse = [channel.csi_fidelity(h, channel.csi_decompress(channel.csi_compress(h, b)))[0] for b in budgets]
        violations += sum(b > a for a, b in zip(nmse, nmse[1:]))
        worst_lossless = max(worst_lossless, nmse[-1])
    ok = violations == 0 and worst_lossless < 1e-6
    record(4, "CSI monotonicity", ok,
           f"100 channels x budgets {list(budgets)}: {violations} increases, worst NMSE at 256 bits={worst_lossless:.2e}")


def _pf_rr_toy(policy, n_tti=2000, dt=0.5e-3):
    """One light user (300 B per TTI, 25 dB) and three full-buffer users at 5, 12, 18 dB."""
    cell = stack.CellState(0, 50, connected_users={0, 1, 2, 3})
    sinr = {0: 25.0, 1: 5.0, 2: 12.0, 3: 18.0}
    got = np.zeros(4)
    for _ in range(n_tti):
        cell.dl_buffer[0] = cell.dl_buffer.get(0, 0.0) + 300.0
        for u in (1, 2, 3):
            cell.dl_buffer[u] = math.inf
        alloc = stack.schedule_tti(cell, sinr, policy, "DL", 14, dt, 2, 2)
        cell.apply(alloc, dt)
        for u, g in alloc.grants.items():
            got[u] += g.goodput_bytes
    return stack.sum_log_throughput(got * 8 / (n_tti * dt))


def test_5_scheduler_properties():
    rng = np.random.default_rng(5)
    bad = 0
    n = 100_000
    for i in range(n):
        rb = int(rng.integers(1, 274))
        k = int(rng.integers(0, 17))
        bufs = {u: (math.inf if rng.random() < 0.3 else float(rng.exponential(5e4))) for u in range(k)}
        cell = stack.CellState(0, rb, connected_users=set(bufs))
        cell.dl_buffer.update(bufs)
        alloc = stack.schedule_tti(cell, {u: float(rng.uniform(-10, 35)) for u in range(k)},
                                   "pf" if i % 2 else "rr", "DL", 14, 0.5e-3, 4, 2)
        if alloc.rb_used > rb or any(g.rb_count < 1 for g in alloc.grants.values()):
            bad += 1
    pf, rr = _pf_rr_toy("pf"), _pf_rr_toy("rr")
    ok = bad == 0 and pf >= rr
    record(5, "scheduler properties", ok,
           f"{n} random TTIs, {bad} conservation violations; toy sum-log PF={pf:.3f} vs RR={rr:.3f}")


def test_6_handover_sanity():
    D = 400.0
    scn = parse_scenario(scenarios.two_cell_doc(D))
    params = StackParams(hysteresis_db=3.0)
    H = 1000
    mid = [behavior.stationary_trajectory(0, 100 + D / 2, 100.0, H + 1)]
    frames = run_episode(EpisodeSpec(scn, horizon_steps=H, stack=params), None, mid)
    n_mid = sum(c["handovers_out"] for f in frames for c in f.cells)
    # drive-by from 20 m to 380 m along the line between the sites, 15 m per step;
    # both sites show max_gain on that line, so A3 fires once 22*log10(x/(D-x)) > 3
    alpha = scn.radio.pathloss["UMa"][1]
    r = 10 ** (3.0 / (10 * alpha))
    x_star = D * r / (1 + r)
    x0, v, H2 = 20.0, 0.05, 25
    k_expected = next(k for k in range(H2) if x0 + v * 300 * k > x_star)
    drive = [behavior.linear_trajectory(0, (100 + x0, 100.0), (v, 0.0), H2 + 1)]
    frames = run_episode(EpisodeSpec(scn, horizon_steps=H2, stack=params), None, drive)
    hos = [f.step for f in frames for c in f.cells for _ in range(c["handovers_out"])]
    ok = n_mid == 0 and hos == [k_expected]
    record(6, "handover sanity", ok,
           f"midpoint: {n_mid} handovers in {H} steps; drive-by handovers at {hos}, hand-computed [{k_expected}]")


def test_7_optimizer_vs_bruteforce(three_cell):
    t0 = time.perf_counter()
    spec = EpisodeSpec(three_cell, horizon_steps=1, mode="coverage")
    space = SearchSpace.grid(spec, "electrical_tilt", 0, 12, 2)
    objective = Objective(spec)
    oracle_best = exhaustive_search(spec, space, objective)
    ratios = []
    for seed in range(20):
        res = local_search_optimize(spec, 150, space, seed=seed, objective=objective)
        assert len(res.trace) <= 150
        ratios.append(res.best_reward / oracle_best.best_reward)
    dt = time.perf_counter() - t0
    hits = sum(r >= 0.98 for r in ratios)
    ok = space.size == 343 and hits >= 18 and dt < 300
    record(7, "optimisation vs brute force", ok,
           f"{hits}/20 seeds >= 98% of oracle {oracle_best.best_reward:.4f} (min ratio {min(ratios):.4f}), {dt:.1f} s")


def test_8_reference_determinism_and_scale(tmp_path):
    scn_path = ROOT / "scenarios" / "reference.json"
    if not scn_path.exists():
        write_scenario(parse_scenario(scenarios.reference_doc()), tmp_path / "reference.json")
        scn_path = tmp_path / "reference.json"
    times = []
    for d in ("a", "b"):
        t0 = time.perf_counter()
        rc = cli_main(["run", "--mode", "stack", "--scenario", str(scn_path), "--steps", "288", "--out", str(tmp_path / d)])
        times.append(time.perf_counter() - t0)
        assert rc == 0
    a = (tmp_path / "a" / "kpis.jsonl").read_bytes()
    b = (tmp_path / "b" / "kpis.jsonl").read_bytes()
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    n_lines = len(a.splitlines())
    ok = a == b and max(times) < 60 and n_lines == 288
    record(8, "reference determinism and scale", ok,
           f"{n_lines} frames, runs {times[0]:.1f} s / {times[1]:.1f} s, identical={a == b}, "
           f"scenario hash {man['scenario_hash'][:12]}")


def test_9_transport_transparency(tmp_path, three_cell):
    write_scenario(three_cell, tmp_path / "s.json")
    spec_doc = {"scenario": str(tmp_path / "s.json"), "horizon_steps": 10, "mode": "stack"}
    (tmp_path / "spec.json").write_text(json.dumps(spec_doc))
    base = Action.from_scenario(three_cell)
    actions = [base.with_value(k % 3, range(8), "electrical_tilt", float(2 * k % 14)).to_dict() for k in range(10)]
    (tmp_path / "actions.json").write_text(json.dumps({"schedule": actions}))
    rc = cli_main(["run", "--spec", str(tmp_path / "spec.json"), "--action", str(tmp_path / "actions.json"),
                   "--out", str(tmp_path / "cli")])
    assert rc == 0
    cli_lines = (tmp_path / "cli" / "kpis.jsonl").read_text().splitlines()

    srv = make_server("127.0.0.1:0", max_sessions=2)
    th = threading.Thread(target=srv.serve_forever, daemon=True)
    th.start()
    try:
        c = Client(*srv.server_address[:2])
        c.hello()
        assert c.reset(spec_doc)["op"] == "reset"
        tcp_lines = [json.dumps(c.step(a)["payload"]["frame"], separators=(",", ":")) for a in actions]
        c.close()
    finally:
        srv.shutdown()
        srv.server_close()
    same = sum(x == y for x, y in zip(cli_lines, tcp_lines))
    ok = len(cli_lines) == 10 and tcp_lines == cli_lines
    record(9, "transport transparency", ok, f"{same}/10 frames byte-identical between TCP client and CLI run")
