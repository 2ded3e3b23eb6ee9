"""Scalar reference evaluators written independently of the vectorised code."""

import math

from netsim.core import SCENARIO_CLASSES, keyed_normals


def pattern_db(max_gain, az_boresight, tilt, hbw, vbw, az, el):
    d = (az - az_boresight) % 360.0
    if d > 180.0:
        d -= 360.0
    ah = min(12.0 * (d / hbw) ** 2, 30.0)
    av = min(12.0 * ((el - tilt) / vbw) ** 2, 30.0)
    return max_gain - min(ah + av, 30.0)


def coverage(scn, points, shadowing=True, loads=None):
    """Return (rsrp[p][c][b], sinr[p]) with plain loops."""
    reg = scn.region
    radio = scn.radio
    n_re = radio.rbs_per_cell * 12
    h_ue = scn.population.ue_height
    cells = [(s, c) for s in scn.sites for c in s.cells]
    rsrp = []
    for x, y in points:
        col = min(max(int(math.floor(x / reg.cell_size)), 0), reg.width - 1)
        row = min(max(int(math.floor(y / reg.cell_size)), 0), reg.height - 1)
        ridx = row * reg.width + col
        cls = SCENARIO_CLASSES[int(reg.scenario_class[row, col])]
        clutter = radio.clutter_loss_db.get(int(reg.clutter[row, col]), 0.0)
        per_cell = []
        for site, cell in cells:
            dx, dy = x - site.position[0], y - site.position[1]
            d2 = math.sqrt(dx * dx + dy * dy)
            dh = site.antenna_height - h_ue
            d3 = max(math.sqrt(d2 * d2 + dh * dh), 1.0)
            az = math.degrees(math.atan2(dx, dy)) % 360.0
            el = math.degrees(math.atan2(dh, d2))
            beta, alpha, gamma = radio.pathloss[cls]
            a, b = radio.calibration
            pl = a * (beta + 10 * alpha * math.log10(d3) + 10 * gamma * math.log10(cell.carrier_freq)) + b
            pl += clutter
            if shadowing:
                z = float(keyed_normals(scn.master_seed, f"shadow/{cell.cell_id}", [ridx])[0])
                pl += z * radio.shadowing_sigma[cls]
            p_re = cell.tx_power - 10 * math.log10(n_re)
            per_cell.append(
                [
                    p_re
                    + pattern_db(cell.max_gain, cell.mechanical_azimuth + bm.azimuth_offset, bm.electrical_tilt,
                                 bm.h_beamwidth, bm.v_beamwidth, az, el)
                    - pl
                    for bm in cell.beams
                ]
            )
        rsrp.append(per_cell)
    noise_mw = 10 ** ((-174 + 10 * math.log10(radio.re_bandwidth_hz) + scn.population.ue_noise_figure) / 10)
    loads = loads if loads is not None else [radio.static_load] * len(cells)
    sinr = []
    for per_cell in rsrp:
        best = [max(v) for v in per_cell]
        s = max(range(len(cells)), key=lambda c: (best[c], -c))
        interf = sum(loads[c] * 10 ** (best[c] / 10) for c in range(len(cells)) if c != s)
        sinr.append(10 * math.log10(10 ** (best[s] / 10) / (interf + noise_mw)))
    return rsrp, sinr
