"""Tapped-delay-line TDC models.

A :class:`DelayLine` holds the per-tap propagation delays of a TDL. Tap ``i``
is also bin ``i`` of the raw transfer function: an arrival phase ``t`` lands
in the first bin whose right edge (prefix sum of the taps) exceeds ``t``.

Everything here is pure: operations return new lines and never mutate their
inputs.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable

import numpy as np


class DelayLineError(ValueError):
    pass


@dataclass(frozen=True)
class DelayLine:
    tap_delays: tuple[float, ...]
    clock_period: float
    label: str = ""
    jitter_ps: float = 0.0
    # (bin_index, magnitude) of clock-region-crossing excursions still present
    crc_steps: tuple[tuple[int, float], ...] = ()

    def __post_init__(self):
        taps = tuple(float(t) for t in self.tap_delays)
        object.__setattr__(self, "tap_delays", taps)
        object.__setattr__(self, "clock_period", float(self.clock_period))
        object.__setattr__(self, "crc_steps",
                           tuple((int(i), float(m)) for i, m in self.crc_steps))
        if len(taps) < 2:
            raise DelayLineError("a delay line needs at least 2 taps")
        if not self.clock_period > 0:
            raise DelayLineError("clock_period must be positive")
        if any(not np.isfinite(t) or t < 0 for t in taps):
            raise DelayLineError("tap delays must be finite and non-negative")
        if self.jitter_ps < 0:
            raise DelayLineError("jitter_ps must be non-negative")
        # relative slack for float prefix sums
        if sum(taps) < self.clock_period * (1 - 1e-12):
            raise DelayLineError(
                f"chain span {sum(taps):.3f} ps does not cover the clock period "
                f"{self.clock_period:.3f} ps")
        for i, _ in self.crc_steps:
            if not 0 <= i < len(taps):
                raise DelayLineError(f"crc step index {i} out of range")

    @property
    def n_bins(self) -> int:
        return len(self.tap_delays)

    @property
    def taps(self) -> np.ndarray:
        return np.asarray(self.tap_delays, dtype=float)

    @property
    def edges(self) -> np.ndarray:
        """Right edges of every bin (inclusive prefix sums of the taps)."""
        return np.cumsum(self.taps)

    def to_dict(self) -> dict:
        d = {
            "label": self.label,
            "clock_period_ps": self.clock_period,
            "tap_delays_ps": list(self.tap_delays),
        }
        if self.jitter_ps:
            d["jitter_ps"] = self.jitter_ps
        if self.crc_steps:
            d["crc_steps"] = [[i, m] for i, m in self.crc_steps]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DelayLine":
        try:
            return cls(
                tap_delays=tuple(d["tap_delays_ps"]),
                clock_period=d["clock_period_ps"],
                label=d.get("label", ""),
                jitter_ps=d.get("jitter_ps", 0.0),
                crc_steps=tuple(tuple(s) for s in d.get("crc_steps", ())),
            )
        except KeyError as exc:
            raise DelayLineError(f"delay-line document is missing {exc}") from None


def save_line(line: DelayLine, path) -> None:
    Path(path).write_text(json.dumps(line.to_dict(), indent=1))


def load_line(path) -> DelayLine:
    return DelayLine.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# defects and mitigation


class DefectKind(str, Enum):
    ULTRA_WIDE = "UltraWideBin"
    ZERO = "ZeroBin"
    CRC_STEP = "CrcStep"


@dataclass(frozen=True)
class Defect:
    kind: DefectKind
    bin_index: int
    magnitude: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", DefectKind(self.kind))
        if self.magnitude < 0:
            raise DelayLineError("defect magnitude must be non-negative")


@dataclass(frozen=True)
class MitigationPlan:
    """Delay-profile transform standing in for LUT delay injection + placement.

    Taps below ``widen_zero_bins_to`` are raised to it (an inverter LUT in the
    sampling path), taps above ``clip_wide_bins_at`` are capped, and a
    fraction ``crc_step_attenuation`` of each tagged clock-region-crossing
    excursion is removed (keeping the chain inside one clock region).
    """
    widen_zero_bins_to: float = 0.0
    clip_wide_bins_at: float = float("inf")
    crc_step_attenuation: float = 0.0
    target_bins: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.widen_zero_bins_to < 0:
            raise DelayLineError("widen_zero_bins_to must be >= 0")
        if not self.clip_wide_bins_at > self.widen_zero_bins_to:
            raise DelayLineError("clip_wide_bins_at must exceed widen_zero_bins_to")
        if not 0.0 <= self.crc_step_attenuation <= 1.0:
            raise DelayLineError("crc_step_attenuation must lie in [0, 1]")
        if self.target_bins is not None:
            object.__setattr__(self, "target_bins", tuple(int(i) for i in self.target_bins))

    @classmethod
    def identity(cls) -> "MitigationPlan":
        return cls()

    def to_dict(self) -> dict:
        return {
            "widen_zero_bins_to": self.widen_zero_bins_to,
            "clip_wide_bins_at": (None if np.isinf(self.clip_wide_bins_at)
                                  else self.clip_wide_bins_at),
            "crc_step_attenuation": self.crc_step_attenuation,
            "target_bins": None if self.target_bins is None else list(self.target_bins),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MitigationPlan":
        cap = d.get("clip_wide_bins_at")
        return cls(
            widen_zero_bins_to=d.get("widen_zero_bins_to", 0.0),
            clip_wide_bins_at=float("inf") if cap is None else cap,
            crc_step_attenuation=d.get("crc_step_attenuation", 0.0),
            target_bins=d.get("target_bins"),
        )


def build_ideal(n_bins: int, clock_period: float, label: str = "ideal") -> DelayLine:
    if n_bins < 2 or not clock_period > 0:
        raise DelayLineError("build_ideal needs n_bins >= 2 and clock_period > 0")
    return DelayLine((clock_period / n_bins,) * n_bins, clock_period, label)


def _apply_defects(taps: np.ndarray, defects: Iterable[Defect]) -> list[tuple[int, float]]:
    crc = []
    for d in defects:
        if not 0 <= d.bin_index < len(taps):
            raise DelayLineError(f"defect index {d.bin_index} out of range [0, {len(taps)})")
        if d.kind is DefectKind.ZERO:
            taps[d.bin_index] = 0.0
        else:
            # a CRC step is a single oversized tap; its prefix sum is the step
            taps[d.bin_index] += d.magnitude
            if d.kind is DefectKind.CRC_STEP:
                crc.append((d.bin_index, d.magnitude))
    return crc


def inject_defects(line: DelayLine, defects: Iterable[Defect]) -> DelayLine:
    taps = line.taps.copy()
    crc = _apply_defects(taps, defects)
    return replace(line, tap_delays=tuple(taps), crc_steps=line.crc_steps + tuple(crc))


def apply_mitigation(line: DelayLine, plan: MitigationPlan) -> DelayLine:
    taps = line.taps.copy()
    remaining = []
    for i, mag in line.crc_steps:
        if plan.target_bins is not None and i not in plan.target_bins:
            remaining.append((i, mag))
            continue
        taps[i] = max(taps[i] - plan.crc_step_attenuation * mag, 0.0)
        # attenuated excursions are no longer tagged; keeps the plan idempotent
    if plan.target_bins is None:
        sel = slice(None)
    else:
        sel = [i for i in plan.target_bins if 0 <= i < len(taps)]
    taps[sel] = np.clip(taps[sel], plan.widen_zero_bins_to, plan.clip_wide_bins_at)
    if taps.sum() < line.clock_period * (1 - 1e-12):
        raise DelayLineError(
            f"mitigated chain spans {taps.sum():.3f} ps, less than the clock period")
    label = line.label.replace("-raw", "") + "-mitigated" if line.label else "mitigated"
    return replace(line, tap_delays=tuple(taps), crc_steps=tuple(remaining), label=label)


# ---------------------------------------------------------------------------
# transfer function


def quantize(line: DelayLine, arrival_phase: float) -> int:
    """Code of the bin containing ``arrival_phase``; zero-width bins never win."""
    if not 0 <= arrival_phase < line.clock_period:
        raise DelayLineError(f"phase {arrival_phase} outside [0, {line.clock_period})")
    # the clamp only matters when float prefix sums fall a hair short of the period
    return min(int(np.searchsorted(line.edges, arrival_phase, side="right")), line.n_bins - 1)


def quantize_many(line: DelayLine, phases) -> np.ndarray:
    phases = np.asarray(phases, dtype=float)
    if phases.size and (phases.min() < 0 or phases.max() >= line.clock_period):
        raise DelayLineError("phase out of range")
    return np.minimum(np.searchsorted(line.edges, phases, side="right"), line.n_bins - 1)


def code_to_time(line: DelayLine, code: int) -> float:
    if not 0 <= code < line.n_bins:
        raise DelayLineError(f"code {code} out of range [0, {line.n_bins})")
    taps = line.tap_delays
    return float(sum(taps[:code]) + taps[code] / 2)


def bin_centers(line: DelayLine) -> np.ndarray:
    edges = line.edges
    return edges - line.taps / 2


# ---------------------------------------------------------------------------
# presets

PRESET_NAMES = ("TDC1_RAW", "TDC1_OPT", "TDC2_RAW", "TDC2_OPT")


def _load_preset_config() -> dict:
    text = resources.files("tdcqkd.data").joinpath("presets.json").read_text()
    return json.loads(text)


def preset_config() -> dict:
    return _load_preset_config()


def _bump(x: np.ndarray, center: float, width: float) -> np.ndarray:
    return np.exp(-0.5 * ((x - center) / width) ** 2)


def generate_taps(params: dict, seed: int) -> np.ndarray:
    """Synthetic tap profile from generator parameters.

    Taps alternate between a narrow and a wide population, as carry-chain
    taps do. Which taps are wide is decided by error diffusion over a duty
    profile ``duty + hump_duty * bump(x)``, so the local bin density (and hence
    the INL) follows the bump deterministically. Narrow widths follow
    ``w_lo + hump_lo * bump(x)``. Seeded Gaussian noise perturbs non-zero taps.
    Widths are in arbitrary units here; :func:`build_from_params` rescales.
    """
    n = int(params["n_bins"])
    x = (np.arange(n) + 0.5) / n
    b = _bump(x, params.get("hump_center", 0.5), params.get("hump_width", 0.1))
    duty = np.clip(params["duty"] + params.get("hump_duty", 0.0) * b, 0.0, 1.0)
    lo = np.maximum(params["w_lo"] + params.get("hump_lo", 0.0) * b, 0.0)
    hi = np.full(n, float(params["w_hi"]))
    wide = np.zeros(n, dtype=bool)
    acc = params.get("phase", 0.5)
    for i in range(n):
        acc += duty[i]
        if acc >= 1.0:
            wide[i] = True
            acc -= 1.0
    taps = np.where(wide, hi, lo)
    noise = params.get("noise_ps", 0.0)
    if noise:
        rng = np.random.default_rng(seed)
        taps = np.where(taps > 0, np.maximum(taps + noise * rng.standard_normal(n), 0.0), 0.0)
    return taps


def _resolve_index(v, n: int) -> int:
    # floats in [0, 1) are chain fractions, ints are absolute indices
    return int(round(v * n)) if isinstance(v, float) and v < 1 else int(v)


def build_from_params(params: dict, seed: int, label: str = "") -> DelayLine:
    """Generate taps, inject the scripted defects, then rescale.

    The rescale places the end of the clock period ``end_frac`` of the way
    through tap ``n_span - 1`` (default: at its far edge); taps after that
    hang off the end of the period, as in a chain built longer than the
    clock.
    """
    taps = generate_taps(params, seed)
    n = len(taps)
    T = float(params["clock_period_ps"])
    n_span = int(params.get("n_span", n))
    defects = [Defect(d["kind"], _resolve_index(d["bin_index"], n), d.get("magnitude", 0.0))
               for d in params.get("defects", ())]
    crc = _apply_defects(taps, defects)
    # the clock edge falls a fraction end_frac of the way through tap n_span - 1
    end_frac = float(params.get("end_frac", 1.0))
    if not 0.0 < end_frac <= 1.0:
        raise DelayLineError("end_frac must lie in (0, 1]")
    scale = T / (taps[:n_span - 1].sum() + end_frac * taps[n_span - 1])
    taps = taps * scale
    # tiny relative margin so float prefix sums still reach the period
    taps[n_span - 1] += T * 1e-12
    return DelayLine(tuple(taps), T, label, jitter_ps=params.get("jitter_ps", 0.0),
                     crc_steps=tuple((i, m * scale) for i, m in crc))


def build_preset(name: str, seed: int = 7) -> DelayLine:
    key = str(name).upper().replace("-", "_")
    cfg = _load_preset_config()["presets"]
    if key not in cfg:
        raise DelayLineError(f"unknown preset {name!r}; choose from {', '.join(PRESET_NAMES)}")
    return build_from_params(cfg[key], seed, label=key.replace("_", "-").lower())


def preset_plan(name: str) -> MitigationPlan:
    """Calibrated mitigation plan shipped for a raw preset."""
    key = str(name).upper().replace("-", "_")
    plans = _load_preset_config()["plans"]
    if key not in plans:
        raise DelayLineError(f"no mitigation plan shipped for {name!r}")
    return MitigationPlan.from_dict(plans[key])
