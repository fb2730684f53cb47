"""Command-line front end: ``tdcqkd <command> [options]``.

Commands: characterize, mitigate, qkd-curve, mc-validate, report. Settings
come from an optional JSON config (``schema_version: 1``) with one section per
command; command-line flags override the config. Exit codes: 0 success,
1 model-domain error, 2 usage or IO error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .characterize import (CharacterizationError, NonlinearityReport, characterize_line,
                           compute_nonlinearity, export_histogram, import_histogram,
                           estimate_bin_widths, load_report, reduction, run_code_density,
                           save_report)
from .montecarlo import MCConfig, MonteCarloError, export_tags, simulate, validate_against_model
from .qkd_metrics import (ModelDomainError, QkdParams, Variant, load_link_config,
                          grid_from_spec, shared_baseline_secret_fractions, sweep)
from .tdc_model import (DelayLineError, MitigationPlan, PRESET_NAMES, apply_mitigation,
                        build_preset, load_line, preset_plan)

log = logging.getLogger("tdcqkd")

SCHEMA_VERSION = 1


class UsageError(Exception):
    """Bad arguments, bad config or unreadable input (exit code 2)."""


# ---------------------------------------------------------------------------
# config


def load_config(path) -> dict:
    if path is None:
        return {"schema_version": SCHEMA_VERSION}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{p}: invalid JSON: {exc}") from None
    if cfg.get("schema_version") != SCHEMA_VERSION:
        raise UsageError(f"{p}: schema_version must be {SCHEMA_VERSION}")
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def _section(args, name: str) -> dict:
    return dict(args.config_doc.get(name, {}))


def _pick(args, sec: dict, key: str, default=None):
    v = getattr(args, key, None)
    if v is not None:
        return v
    return sec.get(key, default)


def _seed(args) -> int:
    s = args.seed if args.seed is not None else args.config_doc.get("seed")
    return 7 if s is None else int(s)


def _out(args, sub: str) -> Path:
    base = Path(args.out or args.config_doc.get("out") or "out")
    d = base / sub
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {d}: {exc}") from None
    return d


def _fmt(args) -> str:
    return args.format or args.config_doc.get("format") or "csv"


def _say(args, msg: str) -> None:
    if not args.quiet:
        print(msg)


def _existing(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"file not found: {p}")
    return p


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    return str(o)


def _line_from(spec: str):
    """A preset name (``tdc1-raw``) or a delay-line JSON file."""
    key = spec.upper().replace("-", "_")
    if key in PRESET_NAMES:
        return build_preset(key)
    return load_line(_existing(spec))


def _plan_from(spec, raw_name: str | None) -> MitigationPlan:
    if spec in (None, "shipped"):
        if raw_name is None:
            raise UsageError("--plan shipped needs a preset as the raw line")
        return preset_plan(raw_name)
    if spec == "identity":
        return MitigationPlan.identity()
    return MitigationPlan.from_dict(json.loads(_existing(spec).read_text()))


# ---------------------------------------------------------------------------
# characterize


def write_report_files(rep: NonlinearityReport, out: Path, stem: str) -> list[Path]:
    paths = [out / f"{stem}_report.json", out / f"{stem}_bins.csv", out / f"{stem}_transfer.csv"]
    save_report(rep, paths[0])
    n = rep.n_active
    with open(paths[1], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["code", "width_ps", "dnl_ps", "inl_ps"])
        for i in range(n):
            w.writerow([i, repr(float(rep.bin_widths[i])), repr(float(rep.dnl[i])), repr(float(rep.inl[i]))])
    # measured vs ideal code transition times
    upper = np.cumsum(rep.bin_widths[:n])
    with open(paths[2], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["code", "ideal_edge_ps", "measured_edge_ps"])
        for i in range(n):
            w.writerow([i, repr((i + 1) * rep.lsb_ideal), repr(float(upper[i]))])
    return paths


def cmd_characterize(args) -> int:
    sec = _section(args, "characterize")
    preset = _pick(args, sec, "preset")
    line_file = _pick(args, sec, "line")
    hist_file = _pick(args, sec, "import_hist")
    hits = _pick(args, sec, "hits")
    if sum(x is not None for x in (preset, line_file, hist_file)) != 1:
        raise UsageError("give exactly one of --preset, --line, --import")
    out = _out(args, "characterize")
    seed = _seed(args)
    if hist_file is not None:
        hist = import_histogram(_existing(hist_file))
        stem = Path(hist_file).stem
        rep = compute_nonlinearity(estimate_bin_widths(hist), hist.clock_period, label=stem)
    else:
        line = _line_from(preset) if preset is not None else load_line(_existing(line_file))
        stem = line.label or Path(line_file).stem
        if hits is None:
            rep = characterize_line(line)
        else:
            hist = run_code_density(line, int(float(hits)), seed=seed,
                                    workers=int(_pick(args, sec, "workers", 1)))
            export_histogram(hist, out / f"{stem}_hist.csv")
            rep = compute_nonlinearity(estimate_bin_widths(hist), line.clock_period,
                                       line.jitter_ps, line.label)
    write_report_files(rep, out, stem)
    _say(args, rep.summary())
    return 0


# ---------------------------------------------------------------------------
# mitigate


def cmd_mitigate(args) -> int:
    sec = _section(args, "mitigate")
    preset = _pick(args, sec, "preset")
    raw_spec = _pick(args, sec, "raw")
    plan_spec = _pick(args, sec, "plan")
    out = _out(args, "mitigate")
    if preset is not None and raw_spec is None and plan_spec is None:
        # the shipped raw/optimized preset pair
        tdc = preset.upper().replace("-", "_").removesuffix("_RAW").removesuffix("_OPT")
        raw, opt = build_preset(f"{tdc}_RAW"), build_preset(f"{tdc}_OPT")
        source = {"mode": "preset-pair", "tdc": tdc.lower()}
    else:
        raw_spec = raw_spec or preset
        if raw_spec is None:
            raise UsageError("give --preset, or --raw with an optional --plan")
        raw = _line_from(raw_spec)
        raw_key = raw_spec.upper().replace("-", "_")
        plan = _plan_from(plan_spec, raw_key if raw_key in PRESET_NAMES else None)
        opt = apply_mitigation(raw, plan)
        source = {"mode": "plan", "raw": raw_spec, "plan": plan.to_dict()}
    before, after = characterize_line(raw), characterize_line(opt)
    red = reduction(before, after)
    write_report_files(before, out, "before")
    write_report_files(after, out, "after")
    _write_json(out / "reduction.json", {"source": source, "reduction_pct": red,
                                         "before": _brief(before), "after": _brief(after)})
    _say(args, before.summary())
    _say(args, after.summary())
    _say(args, "reduction: DNL pp {dnl_pp:.1f}%, INL pp {inl_pp:.1f}%, sigma {sigma_tdc:.1f}%".format(**red))
    return 0


def _brief(rep: NonlinearityReport) -> dict:
    return {"label": rep.label, "dnl_range": list(rep.dnl_range), "inl_range": list(rep.inl_range),
            "w_inl_pp": rep.w_inl_pp, "sigma_tdc": rep.sigma_tdc, "dnl_pp": rep.dnl_pp}


# ---------------------------------------------------------------------------
# qkd-curve


def _link_doc(args, sec: dict) -> dict:
    path = _pick(args, sec, "link")
    return load_config(path) if path else load_link_config()


def cmd_qkd_curve(args) -> int:
    sec = _section(args, "qkd")
    doc = _link_doc(args, sec)
    names = _pick(args, sec, "scenario") or list(doc["scenarios"])
    names = [names] if isinstance(names, str) else list(names)
    out = _out(args, "qkd")
    fmt = _fmt(args)
    all_failed = True
    summary = {}
    for name in names:
        if name not in doc["scenarios"]:
            raise UsageError(f"unknown scenario {name!r}; have {sorted(doc['scenarios'])}")
        sc = doc["scenarios"][name]
        try:
            base = QkdParams.from_dict(sc["link"])
            res = sweep(base, grid_from_spec(sc["singles_grid"]), [Variant(**v) for v in sc["variants"]],
                        c_true_mode=sc.get("c_true_mode", "fixed"), eta_pair=sc.get("eta_pair"))
        except (ValueError, KeyError, TypeError) as exc:
            raise UsageError(f"scenario {name!r}: {exc}") from None
        res.config["scenario"] = name
        bad = [r for r in res.rows if "error" in r]
        for r in bad[:3]:
            log.warning("%s: %s at %.4g cps: %s", name, r["variant_label"], r["singles_sig_cps"], r["error"])
        if len(bad) < len(res.rows):
            all_failed = False
        if fmt == "json":
            (out / f"sweep_{name}.json").write_text(res.to_json() + "\n")
        else:
            (out / f"sweep_{name}.csv").write_text(res.to_csv())
        summary[name] = {"peaks": res.peaks(), "comparisons": res.comparisons()}
        for c in res.comparisons():
            _say(args, f"{name}: peak dQBER {c['pair'][0]} {100 * c['peak_a']:.2f}% vs "
                       f"{c['pair'][1]} {100 * c['peak_b']:.2f}%, "
                       f"relative reduction {100 * c['relative_reduction']:.1f}%")
    illus = doc.get("illustrative_secret_fraction")
    if illus and illus["reference_scenario"] in summary:
        pairs = {n: (s["comparisons"][0]["peak_a"], s["comparisons"][0]["peak_b"])
                 for n, s in summary.items() if s["comparisons"]}
        try:
            summary["secret_fraction"] = shared_baseline_secret_fractions(
                pairs, illus["reference_scenario"], illus["reference_total_qber"])
        except ModelDomainError as exc:
            log.warning("secret-fraction estimate skipped: %s", exc)
    _write_json(out / "peaks.json", summary)
    if all_failed:
        print("error: every operating point is outside the model domain", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# mc-validate


MC_KEYS = ("duration", "pair_rate", "transmission_a", "transmission_b", "sigma_spd_a", "sigma_spd_b",
           "dark_a", "dark_b", "bit_error_prob", "phase_mode", "phase_offset", "readout", "window")


def mc_config_from(sec: dict, seed: int) -> MCConfig:
    kw = {k: sec[k] for k in MC_KEYS if k in sec}
    unknown = set(sec) - set(MC_KEYS) - {"tdc_a", "tdc_b", "z_tol", "export_tags"}
    if unknown:
        raise UsageError(f"unknown mc settings: {sorted(unknown)}")
    for arm in ("tdc_a", "tdc_b"):
        if sec.get(arm):
            kw[arm] = _line_from(sec[arm])
    kw.setdefault("duration", 1.0)
    kw.setdefault("pair_rate", 1e6)
    return MCConfig(seed=seed, **kw)


def cmd_mc_validate(args) -> int:
    sec = _section(args, "mc")
    for k in ("duration", "pair_rate", "window", "tdc_a", "tdc_b", "readout", "phase_mode"):
        v = getattr(args, k, None)
        if v is not None:
            sec[k] = v
    if args.tdc is not None:
        sec["tdc_a"] = sec["tdc_b"] = args.tdc
    seed = _seed(args)
    cfg = mc_config_from(sec, seed)
    out = _out(args, "mc")
    z_tol = float(_pick(args, sec, "z_tol", 3.0))
    rep = validate_against_model(cfg, z_tol=z_tol)
    if _pick(args, sec, "export_tags"):
        a, b, _ = simulate(cfg)
        export_tags((a, b), out / "tags.csv", cfg)
    _write_json(out / "mc_validate.json", rep)
    e, q = rep["eta"], rep["qber"]
    _say(args, f"eta: model {e['model']:.5f} measured {e['hat']:.5f} (z {e['z']:+.2f})")
    c = rep["c_acc"]
    _say(args, f"accidentals: measured {c['hat']:.1f} cps; full-width model {c['model_full_width']:.1f}, "
               f"half-width model {c['model_half_width']:.1f}, matcher form {c['model_matcher']:.1f}")
    _say(args, f"qber: model {q['model']:.5f} measured {q['hat']:.5f} (z {q['z']:+.2f}); "
               f"conservative: {rep['conservative']}")
    return 0


# ---------------------------------------------------------------------------
# report


def cmd_report(args) -> int:
    base = Path(args.out or args.config_doc.get("out") or "out")
    lines = [f"# tdcqkd report", ""]
    warnings = []
    body = []

    char_dir = base / "characterize"
    reps = sorted(char_dir.glob("*_report.json")) if char_dir.is_dir() else []
    if reps:
        body += ["## Characterization", ""]
        for p in reps:
            body.append("- " + load_report(p).summary())
        body.append("")
    else:
        warnings.append(f"no characterization reports in {char_dir}")

    red_p = base / "mitigate" / "reduction.json"
    if red_p.is_file():
        r = json.loads(red_p.read_text())
        pct = r["reduction_pct"]
        body += ["## Mitigation", "",
                 f"- source: {json.dumps(r['source'], sort_keys=True)}",
                 f"- before: {_fmt_brief(r['before'])}",
                 f"- after: {_fmt_brief(r['after'])}",
                 f"- reduction: DNL pp {pct['dnl_pp']:.1f}%, INL pp {pct['inl_pp']:.1f}%, "
                 f"sigma {pct['sigma_tdc']:.1f}%", ""]
    else:
        warnings.append(f"no mitigation summary at {red_p}")

    pk_p = base / "qkd" / "peaks.json"
    if pk_p.is_file():
        pk = json.loads(pk_p.read_text())
        body += ["## QKD sweep peaks", ""]
        for name, s in pk.items():
            if name == "secret_fraction":
                continue
            for c in s["comparisons"]:
                body.append(f"- {name}: peak dQBER {100 * c['peak_a']:.2f}% -> {100 * c['peak_b']:.2f}% "
                            f"(relative reduction {100 * c['relative_reduction']:.1f}%)")
        body.append("")
        sf = pk.get("secret_fraction")
        if sf:
            body += ["## Secret fraction (shared non-TDC baseline)", ""]
            for name, v in sf.items():
                body.append(f"- {name}: QBER {v['qber_raw']:.4f} -> {v['qber_opt']:.4f}, "
                            f"secret fraction {v['secret_fraction_raw']:.3f} → {v['secret_fraction_opt']:.3f} "
                            f"(relative gain {100 * v['relative_gain']:.1f}%)")
            body.append("")
    else:
        warnings.append(f"no sweep peaks at {pk_p}")

    mc_p = base / "mc" / "mc_validate.json"
    if mc_p.is_file():
        m = json.loads(mc_p.read_text())
        body += ["## Monte Carlo check", "",
                 f"- eta: model {m['eta']['model']:.5f}, measured {m['eta']['hat']:.5f} (z {m['eta']['z']:+.2f})",
                 f"- qber: model {m['qber']['model']:.5f}, measured {m['qber']['hat']:.5f}; "
                 f"conservative: {m['conservative']}", ""]
    else:
        warnings.append(f"no Monte Carlo report at {mc_p}")

    for w in warnings:
        log.warning(w)
    prov = {"tool_version": __version__, "seed": _seed(args), "config_hash": config_hash(args.config_doc),
            "inputs": sorted(str(p.relative_to(base)) for p in base.rglob("*")
                             if p.is_file() and p.name != "report.md")} if base.is_dir() else \
        {"tool_version": __version__, "seed": _seed(args), "config_hash": config_hash(args.config_doc),
         "inputs": []}
    lines += body
    if warnings:
        lines += ["## Warnings", ""] + [f"- {w}" for w in warnings] + [""]
    lines += ["## Provenance", "", "```", json.dumps(prov, indent=1, sort_keys=True), "```", ""]
    text = "\n".join(lines)
    try:
        base.mkdir(parents=True, exist_ok=True)
        (base / "report.md").write_text(text)
    except OSError as exc:
        raise UsageError(f"cannot write report into {base}: {exc}") from None
    _say(args, text)
    return 0


def _fmt_brief(b: dict) -> str:
    return (f"{b['label']} DNL [{b['dnl_range'][0]:.1f}, {b['dnl_range'][1]:.1f}] ps, "
            f"INL [{b['inl_range'][0]:.1f}, {b['inl_range'][1]:.1f}] ps, sigma {b['sigma_tdc']:.1f} ps")


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (schema_version 1)")
    common.add_argument("--seed", type=int, help="seed for stochastic steps (default 7)")
    common.add_argument("--out", help="output directory (default ./out)")
    common.add_argument("--format", choices=("csv", "json"), help="sweep output format")
    common.add_argument("--quiet", action="store_true", help="suppress console summaries")

    ap = argparse.ArgumentParser(prog="tdcqkd", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"tdcqkd {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("characterize", parents=[common], help="DNL/INL/sigma of a delay line or histogram")
    p.add_argument("--preset", help=f"one of {', '.join(n.lower().replace('_', '-') for n in PRESET_NAMES)}")
    p.add_argument("--line", help="delay-line JSON file")
    p.add_argument("--import", dest="import_hist", help="code-density histogram CSV")
    p.add_argument("--hits", help="sampled code-density run with this many hits (default: exact widths)")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_characterize)

    p = sub.add_parser("mitigate", parents=[common], help="before/after comparison")
    p.add_argument("--preset", help="tdc1 or tdc2 for the shipped raw/optimized pair")
    p.add_argument("--raw", help="preset name or delay-line file to mitigate")
    p.add_argument("--plan", help="'shipped', 'identity' or a plan JSON file")
    p.set_defaults(func=cmd_mitigate)

    p = sub.add_parser("qkd-curve", parents=[common], help="incremental-QBER sweep over singles rate")
    p.add_argument("--scenario", action="append", help="scenario name (repeatable; default all)")
    p.add_argument("--link", help="link config JSON (default: shipped calibration)")
    p.set_defaults(func=cmd_qkd_curve)

    p = sub.add_parser("mc-validate", parents=[common], help="Monte Carlo check of the model")
    p.add_argument("--duration", type=float)
    p.add_argument("--pair-rate", dest="pair_rate", type=float)
    p.add_argument("--window", type=float, help="full coincidence window width in ps")
    p.add_argument("--tdc", help="delay line for both arms")
    p.add_argument("--tdc-a", dest="tdc_a")
    p.add_argument("--tdc-b", dest="tdc_b")
    p.add_argument("--readout", choices=("calibrated", "nominal"))
    p.add_argument("--phase-mode", dest="phase_mode", choices=("uniform", "locked"))
    p.add_argument("--z-tol", dest="z_tol", type=float)
    p.add_argument("--export-tags", dest="export_tags", action="store_true", default=None)
    p.set_defaults(func=cmd_mc_validate)

    p = sub.add_parser("report", parents=[common], help="collate earlier outputs into report.md")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        args.config_doc = load_config(args.config)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc.filename}: {exc.strerror}", file=sys.stderr)
        return 2
    except (ModelDomainError, MonteCarloError, CharacterizationError, DelayLineError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
