"""Regenerate the packaged reference network and the synthetic 24 h profile.

Run from the repo root:  python3 tools/gen_reference_data.py
Writes src/druopf/data/reference_network.json and synthetic_profile_24h.csv.
All numbers below are synthetic: a plausible 60 MW, 66 kV two-feeder layout,
not any real project's data.
"""

import json
import math
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "src" / "druopf" / "data"

# 66 kV XLPE cable, per km
CABLE_R = 0.06  # ohm/km
CABLE_L = 0.38  # mH/km
CABLE_C_HALF = 0.095  # uF/km per end

HOME_KM = 3.0
SECTION_KM = 1.2

# machine transformer, 6 MVA 0.69/66 kV, 6 % leakage on the LV side
TF_X_OHM = 0.06 * 0.69**2 / 6.0
TF_L_MH = TF_X_OHM / (2 * math.pi * 50.0) * 1e3
TF_R_OHM = 0.005 * 0.69**2 / 6.0

FILTER_UF = 2000.0  # LCL filter capacitance per turbine, LV side

DRU_LC_MH = 57.3  # commutation inductance per bridge (18 ohm at 50 Hz)
DRU_RDC_OHM = 5.0
# stack no-load base: 2 bridges * 1.35047 * 66 kV = 178.26 kV; onshore held at ~0.948 p.u.
DRU_VDC_ONSHORE_KV = 169.0


def feeder(prefix, n, buses, branches, turbines):
    prev = "pcc"
    for i in range(1, n + 1):
        hv = f"{prefix}{i}_hv"
        lv = f"{prefix}{i}_lv"
        km = HOME_KM if i == 1 else SECTION_KM
        downstream = n - i + 1
        buses.append({"id": hv, "kind": "turbine-hv", "level": "mv",
                      "v_min": 59.4, "v_max": 72.6, "shunt_c": 0.0})
        buses.append({"id": lv, "kind": "turbine-lv", "level": "lv",
                      "v_min": 0.621, "v_max": 0.759, "shunt_c": 0.0})
        branches.append({"from": prev, "to": hv,
                         "r": CABLE_R * km, "l": CABLE_L * km,
                         "c_half": CABLE_C_HALF * km,
                         "s_max": 12.0 + 7.0 * downstream})
        branches.append({"from": lv, "to": hv,
                         "r": TF_R_OHM, "l": TF_L_MH, "c_half": 0.0, "s_max": 6.6})
        turbines.append({"bus": lv, "c_f": FILTER_UF, "n_tf": 1.0,
                         "l_tf": TF_L_MH, "p_max": 5.0, "s_rating": 6.0})
        prev = hv


def reference_network():
    buses = [
        {"id": "pcc", "kind": "pcc", "level": "mv",
         "v_min": 59.4, "v_max": 72.6, "shunt_c": 0.0},
        {"id": "dru", "kind": "dru-ac", "level": "mv",
         "v_min": 59.4, "v_max": 72.6, "shunt_c": 0.0},
    ]
    # trunk to the rectifier transformer terminals; the transformer leakage
    # itself acts as commutation inductance and lives in dru.l_c
    branches = [
        {"from": "pcc", "to": "dru", "r": 0.08, "l": 3.1, "c_half": 0.0, "s_max": 70.0},
    ]
    turbines = []
    feeder("a", 6, buses, branches, turbines)
    feeder("b", 6, buses, branches, turbines)
    return {
        "base": {"s_mva": 60.0, "f_hz": 50.0, "v_kv": {"lv": 0.69, "mv": 66.0}},
        "buses": buses,
        "branches": branches,
        "turbines": turbines,
        "dru": {"bus": "dru", "n_bridge": 2, "l_c": DRU_LC_MH,
                "r_dc": DRU_RDC_OHM, "v_dc_onshore": DRU_VDC_ONSHORE_KV},
    }


# farm loading fraction per hour (synthetic diurnal wind shape)
LOADING = [
    0.18, 0.15, 0.13, 0.12, 0.16, 0.22, 0.30, 0.38,
    0.46, 0.55, 0.62, 0.68, 0.74, 0.78, 0.72, 0.66,
    0.60, 0.54, 0.50, 0.44, 0.36, 0.30, 0.25, 0.20,
]


def profile(turbine_buses):
    lines = ["hour,turbine_id,p_mw"]
    n = len(turbine_buses)
    for hour, load in enumerate(LOADING):
        for j, bus in enumerate(turbine_buses):
            spread = 0.08 * math.sin(2 * math.pi * j / n + 0.7 * hour)
            p = 5.0 * load * (1.0 + spread)
            p = min(max(p, 0.0), 4.9)
            lines.append(f"{hour},{bus},{p:.4f}")
    return "\n".join(lines) + "\n"


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    doc = reference_network()
    (OUT / "reference_network.json").write_text(json.dumps(doc, indent=2) + "\n")
    buses = [t["bus"] for t in doc["turbines"]]
    (OUT / "synthetic_profile_24h.csv").write_text(profile(buses))
    print("wrote", OUT)


if __name__ == "__main__":
    main()
