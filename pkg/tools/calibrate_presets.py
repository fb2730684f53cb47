"""Fit the synthetic preset generators to reference DNL/INL/sigma statistics.

Run once, offline; the result is written into src/tdcqkd/data/presets.json.

    python tools/calibrate_presets.py [--seed 7] [--only NAME ...] [--plans-only] [--write]

Only summary statistics are available for the reference lines, so each
preset is a generator (duty-modulated narrow/wide taps plus scripted
defects) whose free parameters are tuned by differential evolution until the
exact-mode characterization reproduces the target row. The mitigation plans
for the raw presets are fitted the same way against the target reductions.
"""
import argparse
import json
from pathlib import Path

import numpy as np
from scipy.optimize import differential_evolution

from tdcqkd.characterize import characterize_line, reduction
from tdcqkd.tdc_model import DelayLineError, MitigationPlan, apply_mitigation, build_from_params

DATA = Path(__file__).resolve().parents[1] / "src" / "tdcqkd" / "data" / "presets.json"

# (dnl_min, dnl_max, inl_min, inl_max, sigma) in ps
TABLE = {
    "TDC1_RAW": (-11.0, 64.3, -20.0, 280.2, 14.7),
    "TDC1_OPT": (-9.3, 20.2, -20.1, 215.7, 10.9),
    "TDC2_RAW": (-8.1, 25.3, -35.3, 35.5, 13.2),
    "TDC2_OPT": (-8.0, 20.1, -29.3, 30.3, 11.1),
}
# sigma the fit aims for. TDC-2 opt cannot go below the uniform-quantizer
# floor (40.06/sqrt(12) = 11.57 ps), so both TDC-2 sigmas are aimed at
# values that keep every cell within 5% and the reduction near 16%.
SIGMA_AIM = {"TDC1_RAW": 14.7, "TDC1_OPT": 10.9, "TDC2_RAW": 13.75, "TDC2_OPT": 11.57}
PCT = {"TDC1": (60.0, 21.0, 25.0), "TDC2": (16.0, 14.0, 16.0)}
# the TDC-2 plan is mainly held to the INL reduction
PLAN_WEIGHT = {"TDC1": (1.0, 1.0, 1.0), "TDC2": (0.05, 1.0, 0.05)}
CELL_WEIGHT = {"TDC1_RAW": (1, 1, 1, 1, 10), "TDC1_OPT": (1, 1, 1, 1, 10), "TDC2_OPT": (1, 1, 1, 1, 30)}

T1, T2 = 10000.0, 1e6 / 260.0

# name -> (fixed params, [(free param, lo, hi), ...])
SPACE = {
    "TDC1_RAW": (
        # jitter feasible for both rows: sqrt(10.9^2 - 8.7^2) < j < sqrt(10.9^2 - 3^2)
        dict(n_bins=996, clock_period_ps=T1, w_lo=0.0, noise_ps=0.3, jitter_ps=7.0),
        [("duty", 0.1, 0.4), ("hump_duty", 0.0, 0.5), ("hump_center", 0.02, 0.3),
         ("hump_width", 0.01, 0.15), ("w_hi", 35.0, 75.0), ("n_span", 860, 960),
         ("ultra_mag", 5.0, 50.0), ("ultra_pos", 0.02, 0.5), ("phase", 0.0, 0.999),
         ("end_frac", 0.05, 1.0)],
    ),
    "TDC1_OPT": (
        dict(n_bins=996, clock_period_ps=T1, noise_ps=0.3),
        [("duty", 0.2, 0.45), ("hump_duty", 0.0, 0.4), ("hump_center", 0.02, 0.3),
         ("hump_width", 0.01, 0.15), ("w_lo", 0.3, 3.0), ("w_hi", 25.0, 40.0),
         ("n_span", 960, 996), ("phase", 0.0, 0.999), ("end_frac", 0.05, 1.0)],
    ),
    "TDC2_RAW": (
        dict(n_bins=96, clock_period_ps=T2, noise_ps=0.2, jitter_ps=0.0),
        [("duty", 0.15, 0.35), ("hump_duty", -0.2, 0.2), ("hump_center", 0.1, 0.9),
         ("hump_width", 0.05, 0.4), ("w_lo", 25.0, 40.0), ("w_hi", 55.0, 75.0)],
    ),
    "TDC2_OPT": (
        dict(n_bins=96, clock_period_ps=T2, noise_ps=0.2, jitter_ps=0.0, duty=0.0),
        [("w_lo", 38.0, 42.0), ("hump_lo", -6.0, 6.0), ("hump_center", 0.1, 0.9),
         ("hump_width", 0.05, 0.4), ("ultra_mag", 10.0, 30.0), ("ultra_pos", 0.05, 0.95),
         ("w_hi", 30.0, 36.0), ("duty_sparse", 0.0, 0.03)],
    ),
}


def to_params(name, x):
    fixed, free = SPACE[name]
    p = dict(fixed)
    vals = dict(zip([f[0] for f in free], x))
    defects = []
    if "ultra_mag" in vals:
        defects.append({"kind": "UltraWideBin", "bin_index": round(float(vals.pop("ultra_pos")), 4),
                        "magnitude": round(float(vals.pop("ultra_mag")), 3)})
    if "duty_sparse" in vals:
        vals["duty"] = vals.pop("duty_sparse")
    if "n_span" in vals:
        vals["n_span"] = int(round(vals["n_span"]))
    p.update({k: (round(float(v), 5) if not isinstance(v, int) else v) for k, v in vals.items()})
    p["defects"] = defects
    return p


def cells(line):
    r = characterize_line(line)
    return np.array([*r.dnl_range, *r.inl_range, r.sigma_tdc]), r


def loss_for(name, seed):
    target = np.array(TABLE[name][:4] + (SIGMA_AIM[name],))

    def f(x):
        try:
            line = build_from_params(to_params(name, x), seed)
            c, _ = cells(line)
        except (DelayLineError, ValueError):
            return 1e6
        wt = np.array(CELL_WEIGHT.get(name, (1,) * 5), dtype=float)
        return float(np.sum(wt * ((c - target) / np.abs(target)) ** 2))
    return f


def fit_preset(name, seed, maxiter=300, shared=None):
    fixed, free = SPACE[name]
    fixed.update(shared or {})
    res = differential_evolution(loss_for(name, seed), [(lo, hi) for _, lo, hi in free],
                                 seed=1, maxiter=maxiter, tol=1e-10, polish=True, popsize=25)
    return to_params(name, res.x), res.fun


def fit_plan(raw_params, name, seed):
    raw = build_from_params(raw_params, seed)
    rep_raw = characterize_line(raw)
    target = np.array(PCT[name])
    L = rep_raw.lsb_ideal

    def rounded(x):
        return round(float(x[0]), 3), round(float(x[0] + x[1]), 3), round(float(x[2]), 3)

    def f(x):
        try:
            # score the plan exactly as it will be stored
            plan = MitigationPlan(*rounded(x))
            red = reduction(rep_raw, characterize_line(apply_mitigation(raw, plan)))
        except (DelayLineError, ValueError):
            return 1e6
        wt = np.array(PLAN_WEIGHT[name])
        return float(np.sum(wt * ((np.array(list(red.values())) - target) / 3.0) ** 2))
    res = differential_evolution(f, [(0.0, 1.5 * L), (1.0, 6 * L), (0.0, 1.0)], seed=1,
                                 maxiter=200, tol=1e-10)
    lo, hi, att = rounded(res.x)
    return {"widen_zero_bins_to": lo, "clip_wide_bins_at": hi,
            "crc_step_attenuation": att, "target_bins": None}, res.fun


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--only", nargs="*")
    ap.add_argument("--write", action="store_true")
    ap.add_argument("--plans-only", action="store_true")
    args = ap.parse_args()
    doc = json.loads(DATA.read_text())
    for name in [] if args.plans_only else (args.only or TABLE):
        shared = {}
        if name.endswith("_OPT"):
            # mitigation leaves the intrinsic jitter alone
            raw = doc["presets"].get(name.replace("_OPT", "_RAW"), {})
            shared["jitter_ps"] = raw.get("jitter_ps", 0.0)
        params, loss = fit_preset(name, args.seed, shared=shared)
        c, rep = cells(build_from_params(params, args.seed))
        print(name, f"loss={loss:.2e}", np.round(c, 2), "target", TABLE[name], "n_active", rep.n_active)
        doc["presets"][name] = params
    for tdc in ("TDC1", "TDC2"):
        raw = doc["presets"].get(f"{tdc}_RAW")
        if raw is None:
            continue
        plan, loss = fit_plan(raw, tdc, args.seed)
        print(f"{tdc}_RAW plan", plan, f"loss={loss:.2e}")
        doc["plans"][f"{tdc}_RAW"] = plan
    if args.write:
        DATA.write_text(json.dumps(doc, indent=1) + "\n")


if __name__ == "__main__":
    main()
