"""Code-density characterization: bin widths, DNL, INL and single-shot precision.

Conventions (all values in picoseconds):

* ``lsb_ideal = clock_period / n_active`` where ``n_active`` counts the codes
  reachable inside one clock period. A chain longer than the period has
  trailing taps that no arrival ever reaches; they are not part of the
  transfer function.
* ``dnl[i] = w[i] - lsb_ideal`` and ``inl[i] = dnl[0] + ... + dnl[i]``
  (inclusive prefix sum, implicit zero before code 0).
* ``sigma_tdc = sqrt(sum(w**3) / (12 * sum(w)) + jitter**2)``: RMS error of
  bin-centre readout under uniform arrivals, plus the line's intrinsic
  random jitter when known.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from . import kernels
from .tdc_model import DelayLine

log = logging.getLogger(__name__)


class CharacterizationError(ValueError):
    pass


class PhaseMode(str, Enum):
    UNIFORM = "uniform"
    LOCKED = "locked"

    @classmethod
    def parse(cls, v) -> "PhaseMode":
        if isinstance(v, cls):
            return v
        s = str(v).lower()
        if s in ("phaselocked", "phase_locked", "locked"):
            return cls.LOCKED
        return cls(s)


@dataclass(frozen=True)
class CodeHistogram:
    counts: np.ndarray
    clock_period: float
    phase_mode: PhaseMode = PhaseMode.UNIFORM

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 1 or counts.size == 0:
            raise CharacterizationError("counts must be a non-empty 1-D sequence")
        if not np.issubdtype(counts.dtype, np.integer):
            if not np.all(np.equal(np.mod(counts, 1), 0)):
                raise CharacterizationError("counts must be integers")
        counts = counts.astype(np.int64)
        if (counts < 0).any():
            raise CharacterizationError("counts must be non-negative")
        if counts.sum() <= 0:
            raise CharacterizationError("histogram holds no hits")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "phase_mode", PhaseMode.parse(self.phase_mode))
        if not self.clock_period > 0:
            raise CharacterizationError("clock_period must be positive")

    @property
    def total_hits(self) -> int:
        return int(self.counts.sum())

    @property
    def n_bins(self) -> int:
        return len(self.counts)


@dataclass
class NonlinearityReport:
    bin_widths: np.ndarray
    dnl: np.ndarray
    inl: np.ndarray
    dnl_range: tuple[float, float]
    inl_range: tuple[float, float]
    w_inl_pp: float
    sigma_tdc: float
    lsb_ideal: float
    clock_period: float
    n_active: int
    # sum(dnl) - (sum(widths) - clock_period); zero for consistent inputs
    span_residual: float = 0.0
    label: str = ""

    @property
    def dnl_pp(self) -> float:
        return self.dnl_range[1] - self.dnl_range[0]

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("bin_widths", "dnl", "inl"):
            d[k] = [float(v) for v in d[k]]
        d["dnl_range"] = list(self.dnl_range)
        d["inl_range"] = list(self.inl_range)
        d["dnl_pp"] = self.dnl_pp
        return d

    def summary(self) -> str:
        return (f"{self.label or 'line'}: DNL [{self.dnl_range[0]:.1f}, {self.dnl_range[1]:.1f}] ps, "
                f"INL [{self.inl_range[0]:.1f}, {self.inl_range[1]:.1f}] ps, "
                f"sigma_TDC {self.sigma_tdc:.1f} ps, LSB {self.lsb_ideal:.3f} ps")


def effective_widths(line: DelayLine) -> np.ndarray:
    """Exact measure of every bin inside [0, clock_period)."""
    edges = np.minimum(line.edges, line.clock_period)
    return np.diff(np.concatenate(([0.0], edges)))


def active_bins(widths) -> int:
    """Codes up to the last one with non-zero width inside the period."""
    w = np.asarray(widths, dtype=float)
    # slivers left by the float margin at the end of the period do not count
    nz = np.flatnonzero(w > 1e-9 * w.sum())
    if nz.size == 0:
        raise CharacterizationError("all bin widths are zero")
    return int(nz[-1]) + 1


def default_phase_sigma(line_or_n, clock_period: float | None = None) -> float:
    n = line_or_n.n_bins if isinstance(line_or_n, DelayLine) else int(line_or_n)
    T = line_or_n.clock_period if isinstance(line_or_n, DelayLine) else clock_period
    return 5.0 * T / n


def run_code_density(line: DelayLine, n_hits: int, phase_mode=PhaseMode.UNIFORM,
                     seed: int = 0, phase_mean: float | None = None,
                     phase_sigma: float | None = None, workers: int = 1) -> CodeHistogram:
    """Histogram ``n_hits`` simulated arrivals through ``line``.

    Hit ``j`` draws its phase from a counter-based generator keyed on
    ``(seed, j)``, so splitting the run across workers cannot change the
    result.
    """
    n_hits = int(n_hits)
    if n_hits <= 0:
        raise CharacterizationError("n_hits must be positive")
    mode = PhaseMode.parse(phase_mode)
    if n_hits < 100 * line.n_bins:
        log.warning("only %d hits for %d bins; widths will be noisy", n_hits, line.n_bins)
    T = line.clock_period
    mean = T / 2 if phase_mean is None else float(phase_mean)
    sigma = default_phase_sigma(line) if phase_sigma is None else float(phase_sigma)
    key = kernels.seed_key(seed)
    m = 0 if mode is PhaseMode.UNIFORM else 1
    edges = line.edges
    bounds = np.linspace(0, n_hits, max(1, int(workers)) + 1).astype(np.int64)
    parts = [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    if len(parts) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(len(parts)) as ex:
            res = list(ex.map(lambda ab: kernels.code_density(edges, T, key, ab[0], ab[1], m, mean, sigma), parts))
        counts = np.sum(res, axis=0)
    else:
        counts = kernels.code_density(edges, T, key, 0, n_hits, m, mean, sigma)
    return CodeHistogram(np.asarray(counts, dtype=np.int64), T, mode)


def estimate_bin_widths(hist: CodeHistogram) -> np.ndarray:
    if hist.phase_mode is not PhaseMode.UNIFORM:
        raise CharacterizationError(
            "code-density widths need uniformly distributed arrival phases; "
            "a phase-locked histogram only probes a subset of bins")
    return hist.counts / hist.total_hits * hist.clock_period


def estimate_sigma(widths, clock_period: float | None = None, jitter_ps: float = 0.0) -> float:
    w = np.asarray(widths, dtype=float)
    if (w < 0).any():
        raise CharacterizationError("widths must be non-negative")
    s1 = w.sum()
    if not s1 > 0:
        raise CharacterizationError("all bin widths are zero")
    return math.sqrt(float(np.sum(w ** 3)) / (12.0 * s1) + jitter_ps ** 2)


def compute_nonlinearity(widths, clock_period: float, jitter_ps: float = 0.0,
                         label: str = "") -> NonlinearityReport:
    w = np.asarray(widths, dtype=float)
    if w.size == 0:
        raise CharacterizationError("empty width list")
    if (w < 0).any():
        raise CharacterizationError("widths must be non-negative")
    n_active = active_bins(w)
    lsb = clock_period / n_active
    dnl = w[:n_active] - lsb
    inl = np.cumsum(dnl)
    return NonlinearityReport(
        bin_widths=w,
        dnl=dnl,
        inl=inl,
        dnl_range=(float(dnl.min()), float(dnl.max())),
        inl_range=(float(inl.min()), float(inl.max())),
        w_inl_pp=float(inl.max() - inl.min()),
        sigma_tdc=estimate_sigma(w, clock_period, jitter_ps),
        lsb_ideal=lsb,
        clock_period=float(clock_period),
        n_active=n_active,
        span_residual=float(dnl.sum() - (w[:n_active].sum() - clock_period)),
        label=label,
    )


def characterize_line(line: DelayLine, n_hits: int | None = None, seed: int = 0,
                      workers: int = 1) -> NonlinearityReport:
    """Exact characterization when ``n_hits`` is None, sampled otherwise."""
    if n_hits is None:
        w = effective_widths(line)
    else:
        w = estimate_bin_widths(run_code_density(line, n_hits, PhaseMode.UNIFORM, seed,
                                                 workers=workers))
    return compute_nonlinearity(w, line.clock_period, line.jitter_ps, line.label)


def reduction(before: NonlinearityReport, after: NonlinearityReport) -> dict:
    """Percentage reductions in the before/after-table sense."""
    def pct(a, b):
        return 100.0 * (a - b) / a if a else 0.0
    return {
        "dnl_pp": pct(before.dnl_pp, after.dnl_pp),
        "inl_pp": pct(before.w_inl_pp, after.w_inl_pp),
        "sigma_tdc": pct(before.sigma_tdc, after.sigma_tdc),
    }


# ---------------------------------------------------------------------------
# files


def export_histogram(hist: CodeHistogram, path) -> None:
    lines = [f"# clock_period_ps={hist.clock_period!r} phase_mode={hist.phase_mode.value}"]
    lines += [f"{c},{n}" for c, n in enumerate(hist.counts)]
    Path(path).write_text("\n".join(lines) + "\n")


def import_histogram(path) -> CodeHistogram:
    path = Path(path)
    text = path.read_text().splitlines()
    if not text or not text[0].startswith("#"):
        raise CharacterizationError(f"{path}: missing '# clock_period_ps=...' header")
    meta = {}
    for tok in text[0].lstrip("#").split():
        if "=" in tok:
            k, v = tok.split("=", 1)
            meta[k] = v
    try:
        period = float(meta["clock_period_ps"])
        mode = PhaseMode.parse(meta.get("phase_mode", "uniform"))
    except (KeyError, ValueError) as exc:
        raise CharacterizationError(f"{path}: bad header: {exc}") from None
    codes, counts = [], []
    for lineno, row in enumerate(text[1:], start=2):
        row = row.strip()
        if not row or row.startswith("#"):
            continue
        try:
            c, n = row.split(",")
            codes.append(int(c))
            counts.append(int(n))
        except ValueError:
            raise CharacterizationError(f"{path}:{lineno}: expected 'code,count', got {row!r}") from None
        if counts[-1] < 0:
            raise CharacterizationError(f"{path}:{lineno}: negative count")
    if codes != list(range(len(codes))):
        raise CharacterizationError(f"{path}: codes must run 0..N-1 in order")
    return CodeHistogram(np.asarray(counts, dtype=np.int64), period, mode)


def save_report(report: NonlinearityReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=1))


def load_report(path) -> NonlinearityReport:
    d = json.loads(Path(path).read_text())
    d.pop("dnl_pp", None)
    for k in ("bin_widths", "dnl", "inl"):
        d[k] = np.asarray(d[k], dtype=float)
    d["dnl_range"] = tuple(d["dnl_range"])
    d["inl_range"] = tuple(d["inl_range"])
    return NonlinearityReport(**d)
