"""Ready-made scenario documents (plain dicts, same schema as the JSON files)."""

from __future__ import annotations

import math

import numpy as np


def _cell(cid, azimuth, **kw):
    d = {"cell_id": cid, "mechanical_azimuth": azimuth, "tx_power": 43.0, "carrier_freq": 3.5,
         "bandwidth": 100.0, "n_tx_antennas": 4, "max_gain": 17.0}
    d.update(kw)
    return d


def reference_doc(n_users: int = 500, seed: int = 2024, isd: float = 500.0) -> dict:
    """Seven tri-sector sites on a hexagon (21 cells), 2.5 km square region."""
    size, cs = 2500.0, 25.0
    n = int(size / cs)
    cx = cy = size / 2
    centres = [(cx, cy)] + [
        (cx + isd * math.cos(math.radians(30 + 60 * i)), cy + isd * math.sin(math.radians(30 + 60 * i)))
        for i in range(6)
    ]
    # dense-clutter block in the middle third, open elsewhere
    clutter = np.zeros((n, n), dtype=int)
    clutter[n // 3 : 2 * n // 3, n // 3 : 2 * n // 3] = 1
    sites = []
    for s, (x, y) in enumerate(centres):
        cells = [_cell(3 * s + j, 120.0 * j) for j in range(3)]
        sites.append({"site_id": s, "position": [round(x, 3), round(y, 3)], "antenna_height": 25.0, "cells": cells})
    return {
        "region": {"origin_lat": 39.9, "origin_lon": 116.4, "cell_size": cs, "width": n, "height": n,
                   "clutter": clutter.tolist(), "scenario_class": "UMa"},
        "sites": sites,
        "population": {
            "n_users": n_users,
            "speed_classes": [{"speed": 0.0, "fraction": 0.3}, {"speed": 1.5, "fraction": 0.5},
                              {"speed": 10.0, "fraction": 0.2}],
            "traffic_profiles": [
                {"session_rate": 4.0, "mean_session_packets": 30, "packet_size_log_mu": math.log(1200.0),
                 "packet_size_log_sigma": 1.0, "dl_fraction": 0.85, "fraction": 0.7},
                {"session_rate": 1.0, "mean_session_packets": 200, "packet_size_log_mu": math.log(1400.0),
                 "packet_size_log_sigma": 0.5, "dl_fraction": 0.95, "fraction": 0.3},
            ],
            "ue_noise_figure": 9.0,
            "ue_height": 1.5,
        },
        "radio": {"re_bandwidth_hz": 30000.0, "rbs_per_cell": 273},
        "seed": seed,
    }


def three_cell_doc(n_users: int = 60, seed: int = 7) -> dict:
    """Three single-sector sites in a row, boresights toward the region centre line."""
    beams = [{"azimuth_offset": -52.5 + 15.0 * i, "electrical_tilt": 6.0, "h_beamwidth": 20.0, "v_beamwidth": 8.0}
             for i in range(8)]
    sites = [
        {"site_id": 0, "position": [150.0, 400.0], "antenna_height": 30.0, "cells": [_cell(0, 90.0, beams=beams)]},
        {"site_id": 1, "position": [650.0, 400.0], "antenna_height": 30.0, "cells": [_cell(1, 90.0, beams=beams)]},
        {"site_id": 2, "position": [1150.0, 400.0], "antenna_height": 30.0, "cells": [_cell(2, 270.0, beams=beams)]},
    ]
    return {
        "region": {"origin_lat": 31.2, "origin_lon": 121.5, "cell_size": 20.0, "width": 65, "height": 40,
                   "scenario_class": "UMa"},
        "sites": sites,
        "population": {"n_users": n_users, "speed_classes": [{"speed": 0.0, "fraction": 1.0}]},
        "radio": {"shadowing_sigma": {"UMa": 4.0}},
        "seed": seed,
    }


def two_cell_doc(distance: float = 400.0, n_users: int = 1) -> dict:
    """Two identical cells facing each other along y = 100, flat pattern vertically.

    Antennas sit at UE height with zero tilt and zero beam offsets, so the
    pattern contributes exactly ``max_gain`` on the line between the sites and
    only path loss separates the two cells.
    """
    beams = [{"azimuth_offset": 0.0, "electrical_tilt": 0.0, "h_beamwidth": 30.0, "v_beamwidth": 10.0}] * 8
    w = distance + 200.0
    return {
        "region": {"cell_size": 10.0, "width": int(w / 10), "height": 20, "scenario_class": "UMa"},
        "sites": [
            {"site_id": 0, "position": [100.0, 100.0], "antenna_height": 1.5, "cells": [_cell(0, 90.0, beams=beams)]},
            {"site_id": 1, "position": [100.0 + distance, 100.0], "antenna_height": 1.5,
             "cells": [_cell(1, 270.0, beams=beams)]},
        ],
        "population": {"n_users": n_users, "speed_classes": [{"speed": 0.0, "fraction": 1.0}],
                       "ue_height": 1.5},
        "radio": {"shadowing_sigma": {"UMa": 0.0, "UMi": 0.0, "Indoor": 0.0}},
        "seed": 1,
    }


def single_cell_doc(n_users: int = 1, full_buffer: bool = False) -> dict:
    prof = {"full_buffer": True, "dl_fraction": 1.0} if full_buffer else {}
    return {
        "region": {"cell_size": 10.0, "width": 40, "height": 40, "scenario_class": "UMa"},
        "sites": [{"site_id": 0, "position": [200.0, 200.0], "antenna_height": 25.0,
                   "cells": [_cell(0, 0.0)]}],
        "population": {"n_users": n_users, "speed_classes": [{"speed": 0.0, "fraction": 1.0}],
                       "traffic_profiles": [dict(prof, fraction=1.0)]},
        "radio": {"shadowing_sigma": {"UMa": 0.0, "UMi": 0.0, "Indoor": 0.0}},
        "seed": 5,
    }
