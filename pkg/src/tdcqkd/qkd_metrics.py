"""Analytical coincidence-timing and QBER model with a TDC contribution.

Times are picoseconds, rates are counts per second. The model chain:

    dt_eff    = dt0 + W_inl_pp                      (worst-case window)
    sigma_sys = sqrt(s_spd^2 + s_other^2 + s_tdc^2)
    eta_coin  = erf(dt_eff / (2 sqrt(2) sigma_sys))
    S_X       = S_X,sig + D_X
    C_acc     = S_A S_B dt_eff
    C_det     = eta_coin C_true + C_acc
    QBER      = (eta_coin C_true e_base + C_acc / 2) / C_det

``dt_eff`` is the full width of the acceptance window, so a matcher that
accepts ``|t_a - t_b| <= h`` corresponds to ``dt_eff = 2 h``.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import erf

PS = 1e-12


class ModelDomainError(ValueError):
    """Raised for operating points the model cannot evaluate."""


def _nonneg(**kw):
    for k, v in kw.items():
        if not v >= 0:
            raise ValueError(f"{k} must be non-negative, got {v}")


@dataclass(frozen=True)
class QkdParams:
    delta_t0: float
    w_inl_pp: float = 0.0
    sigma_spd: float = 0.0
    sigma_other: float = 0.0
    sigma_tdc: float = 0.0
    s_a_sig: float = 0.0
    s_b_sig: float = 0.0
    d_a: float = 0.0
    d_b: float = 0.0
    c_true: float = 0.0
    e_base: float = 0.0

    def __post_init__(self):
        d = asdict(self)
        e = d.pop("e_base")
        _nonneg(**d)
        if not 0.0 <= e <= 0.5:
            raise ValueError(f"e_base must lie in [0, 0.5], got {e}")

    def without_tdc(self) -> "QkdParams":
        return replace(self, sigma_tdc=0.0, w_inl_pp=0.0)

    @classmethod
    def from_dict(cls, d: dict) -> "QkdParams":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown link parameters: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class QkdPoint:
    delta_t_eff: float
    sigma_sys: float
    eta_coin: float
    s_a: float
    s_b: float
    c_acc: float
    c_det: float
    qber: float
    delta_qber_tdc: float
    secret_fraction: float


def effective_window(delta_t0: float, w_inl_pp: float) -> float:
    """Coincidence window widened by the full peak-to-peak INL.

    An upper-bound approximation: it assumes the whole raw INL excursion must
    be tolerated by the coincidence logic.
    """
    _nonneg(delta_t0=delta_t0, w_inl_pp=w_inl_pp)
    return delta_t0 + w_inl_pp


def system_jitter(sigma_spd: float, sigma_other: float, sigma_tdc: float) -> float:
    _nonneg(sigma_spd=sigma_spd, sigma_other=sigma_other, sigma_tdc=sigma_tdc)
    return math.sqrt(sigma_spd ** 2 + sigma_other ** 2 + sigma_tdc ** 2)


def capture_fraction(delta_t_eff: float, sigma_sys: float) -> float:
    _nonneg(delta_t_eff=delta_t_eff, sigma_sys=sigma_sys)
    if sigma_sys == 0:
        return 1.0 if delta_t_eff > 0 else 0.0
    if math.isinf(delta_t_eff):
        return 1.0
    return float(erf(delta_t_eff / (2.0 * math.sqrt(2.0) * sigma_sys)))


def singles(s_sig: float, d: float) -> float:
    _nonneg(s_sig=s_sig, d=d)
    return s_sig + d


def accidental_rate(s_a: float, s_b: float, delta_t_eff: float) -> float:
    _nonneg(s_a=s_a, s_b=s_b, delta_t_eff=delta_t_eff)
    # ps -> s; dividing by 1e12 keeps round numbers exact
    return s_a * s_b * delta_t_eff / 1e12


def binary_entropy(q: float) -> float:
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q}")
    if q == 0.0 or q == 1.0:
        return 0.0
    return -q * math.log2(q) - (1 - q) * math.log2(1 - q)


def secret_fraction(q: float) -> float:
    """Asymptotic BB84 estimate ``1 - 2 h2(q)``; negative means no key."""
    return 1.0 - 2.0 * binary_entropy(q)


def secret_fraction_gain(q_before: float, q_after: float) -> float:
    """Relative secret-fraction change when QBER moves from ``q_before`` to ``q_after``."""
    r0 = secret_fraction(q_before)
    if r0 == 0:
        raise ModelDomainError("secret fraction is zero at the starting QBER")
    return secret_fraction(q_after) / r0 - 1.0


def _evaluate(p: QkdParams) -> tuple:
    dt = effective_window(p.delta_t0, p.w_inl_pp)
    sig = system_jitter(p.sigma_spd, p.sigma_other, p.sigma_tdc)
    eta = capture_fraction(dt, sig)
    s_a, s_b = singles(p.s_a_sig, p.d_a), singles(p.s_b_sig, p.d_b)
    c_acc = accidental_rate(s_a, s_b, dt)
    true_part = eta * p.c_true
    c_det = true_part + c_acc
    if not c_det > 0:
        raise ModelDomainError("no detected coincidences at this operating point")
    q = (true_part * p.e_base + 0.5 * c_acc) / c_det
    return dt, sig, eta, s_a, s_b, c_acc, c_det, q


def qber(params: QkdParams) -> QkdPoint:
    dt, sig, eta, s_a, s_b, c_acc, c_det, q = _evaluate(params)
    q0 = _evaluate(params.without_tdc())[-1]
    return QkdPoint(dt, sig, eta, s_a, s_b, c_acc, c_det, q, q - q0, secret_fraction(q))


def delta_qber_tdc(params: QkdParams) -> float:
    return _evaluate(params)[-1] - _evaluate(params.without_tdc())[-1]


def delta_qber_components(params: QkdParams) -> dict:
    """Diagnostic split of the TDC penalty (not part of the reference model).

    ``jitter_only`` zeroes only the INL window term, ``window_only`` only the
    TDC jitter term; they need not add up to ``total``.
    """
    q0 = _evaluate(params.without_tdc())[-1]
    return {
        "total": _evaluate(params)[-1] - q0,
        "jitter_only": _evaluate(replace(params, w_inl_pp=0.0))[-1] - q0,
        "window_only": _evaluate(replace(params, sigma_tdc=0.0))[-1] - q0,
    }


# ---------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True)
class Variant:
    label: str
    sigma_tdc: float
    w_inl_pp: float


SWEEP_COLUMNS = ("singles_sig_cps", "variant_label", "delta_t_eff_ps", "sigma_sys_ps", "eta_coin",
                 "c_acc_cps", "c_det_cps", "qber", "delta_qber_tdc", "secret_fraction")


@dataclass
class SweepResult:
    rows: list[dict]
    variants: list[Variant]
    c_true_mode: str
    eta_pair: float | None
    config: dict

    def curve(self, label: str, column: str = "delta_qber_tdc") -> tuple[np.ndarray, np.ndarray]:
        rows = [r for r in self.rows if r["variant_label"] == label]
        return (np.array([r["singles_sig_cps"] for r in rows]),
                np.array([r[column] for r in rows], dtype=float))

    def peaks(self) -> dict:
        out = {}
        for v in self.variants:
            x, y = self.curve(v.label)
            if np.all(np.isnan(y)):
                out[v.label] = {"peak_delta_qber": float("nan"), "singles_sig_cps": float("nan")}
                continue
            k = int(np.nanargmax(y))
            _, q = self.curve(v.label, "qber")
            _, r = self.curve(v.label, "secret_fraction")
            out[v.label] = {"peak_delta_qber": float(y[k]), "singles_sig_cps": float(x[k]),
                            "qber_at_peak": float(q[k]), "secret_fraction_at_peak": float(r[k])}
        return out

    def comparisons(self) -> list[dict]:
        peaks = self.peaks()
        out = []
        for i, a in enumerate(self.variants):
            for b in self.variants[i + 1:]:
                xa, ya = self.curve(a.label)
                _, yb = self.curve(b.label)
                diff = np.abs(ya - yb)
                k = int(np.nanargmax(diff)) if not np.all(np.isnan(diff)) else 0
                pa, pb = peaks[a.label]["peak_delta_qber"], peaks[b.label]["peak_delta_qber"]
                out.append({
                    "pair": [a.label, b.label],
                    "peak_a": pa, "peak_b": pb,
                    "relative_reduction": (1 - pb / pa) if pa else float("nan"),
                    "max_difference": float(diff[k]) if diff.size else 0.0,
                    "max_difference_at_cps": float(xa[k]) if xa.size else float("nan"),
                })
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in self.rows:
            w.writerow([r["variant_label"] if c == "variant_label" else repr(float(r[c]))
                        for c in SWEEP_COLUMNS])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({
            "config": self.config,
            "c_true_mode": self.c_true_mode,
            "eta_pair": self.eta_pair,
            "variants": [asdict(v) for v in self.variants],
            "rows": self.rows,
            "peaks": self.peaks(),
            "comparisons": self.comparisons(),
        }, indent=1, default=float)


def read_sweep_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for c in SWEEP_COLUMNS:
            if c != "variant_label":
                r[c] = float(r[c])
    return rows


def sweep(base: QkdParams, singles_grid: Sequence[float], variants: Sequence,
          c_true_mode: str = "fixed", eta_pair: float | None = None,
          singles_grid_b: Sequence[float] | None = None) -> SweepResult:
    """Evaluate every variant at every singles rate.

    ``c_true_mode="pair"`` sets ``C_true = eta_pair * min(S_A,sig, S_B,sig)``
    at each grid point; ``"fixed"`` keeps ``base.c_true``. Unusable points
    are kept as NaN rows with an ``error`` entry.
    """
    grid = [float(g) for g in singles_grid]
    grid_b = grid if singles_grid_b is None else [float(g) for g in singles_grid_b]
    if not grid or len(grid_b) != len(grid):
        raise ValueError("singles grid must be non-empty (and per-arm grids equal length)")
    if any(not (g >= 0 and math.isfinite(g)) for g in grid + grid_b):
        raise ValueError("singles rates must be finite and non-negative")
    if c_true_mode not in ("fixed", "pair"):
        raise ValueError("c_true_mode must be 'fixed' or 'pair'")
    if c_true_mode == "pair" and not (eta_pair is not None and 0 <= eta_pair <= 1):
        raise ValueError("pair mode needs eta_pair in [0, 1]")
    vs = [v if isinstance(v, Variant) else Variant(*v) for v in variants]
    if not vs:
        raise ValueError("at least one variant is required")
    rows = []
    for v in vs:
        for ga, gb in zip(grid, grid_b):
            p = replace(base, s_a_sig=ga, s_b_sig=gb, sigma_tdc=v.sigma_tdc, w_inl_pp=v.w_inl_pp)
            if c_true_mode == "pair":
                p = replace(p, c_true=eta_pair * min(ga, gb))
            row = {"singles_sig_cps": ga, "variant_label": v.label}
            try:
                pt = qber(p)
            except ModelDomainError as exc:
                row.update({c: float("nan") for c in SWEEP_COLUMNS[2:]})
                row["error"] = str(exc)
            else:
                row.update({"delta_t_eff_ps": pt.delta_t_eff, "sigma_sys_ps": pt.sigma_sys,
                            "eta_coin": pt.eta_coin, "c_acc_cps": pt.c_acc, "c_det_cps": pt.c_det,
                            "qber": pt.qber, "delta_qber_tdc": pt.delta_qber_tdc,
                            "secret_fraction": pt.secret_fraction})
            rows.append(row)
    cfg = {"base": asdict(base), "singles_grid": grid}
    return SweepResult(rows, vs, c_true_mode, eta_pair, cfg)


# ---------------------------------------------------------------------------
# shipped link scenarios


def load_link_config() -> dict:
    from importlib import resources
    return json.loads(resources.files("tdcqkd.data").joinpath("link_default.json").read_text())


def scenario(name: str, cfg: dict | None = None) -> dict:
    cfg = cfg or load_link_config()
    try:
        return cfg["scenarios"][name]
    except KeyError:
        raise ValueError(f"unknown scenario {name!r}; have {sorted(cfg['scenarios'])}") from None


def grid_from_spec(spec) -> list[float]:
    if isinstance(spec, dict):
        return list(np.linspace(spec["start"], spec["stop"], int(spec["num"])))
    return [float(g) for g in spec]


def run_scenario(name: str, cfg: dict | None = None) -> SweepResult:
    sc = scenario(name, cfg)
    base = QkdParams.from_dict(sc["link"])
    res = sweep(base, grid_from_spec(sc["singles_grid"]),
                [Variant(**v) for v in sc["variants"]],
                c_true_mode=sc.get("c_true_mode", "fixed"), eta_pair=sc.get("eta_pair"))
    res.config["scenario"] = name
    return res


def shared_baseline_secret_fractions(peaks: dict, reference: str, reference_qber: float) -> dict:
    """Illustrative total-QBER pairs from the peak TDC penalties.

    ``peaks`` maps scenario name to ``(peak_raw, peak_opt)``. The raw system
    of ``reference`` is pinned at total QBER ``reference_qber``; every
    scenario shares the resulting non-TDC baseline
    ``reference_qber - peak_raw(reference)``, so each total QBER is that
    baseline plus the scenario's own peak increment.
    """
    if reference not in peaks:
        raise ValueError(f"reference scenario {reference!r} has no peaks")
    base = reference_qber - peaks[reference][0]
    if not 0.0 <= base <= 0.5:
        raise ModelDomainError(f"shared baseline QBER {base:.4f} outside [0, 0.5]")
    out = {}
    for name, (raw, opt) in peaks.items():
        q_raw, q_opt = base + raw, base + opt
        r_raw, r_opt = secret_fraction(q_raw), secret_fraction(q_opt)
        out[name] = {"baseline_qber": base, "qber_raw": q_raw, "qber_opt": q_opt,
                     "secret_fraction_raw": r_raw, "secret_fraction_opt": r_opt,
                     "relative_gain": secret_fraction_gain(q_raw, q_opt)}
    return out
