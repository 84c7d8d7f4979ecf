"""Statistics over sensor traces, used to compare sampling schemes."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import find_peaks

from .errors import EmptyTrace

TRACE_HEADER = ("t_s", "reading_ugm3", "inhale_f", "exhale_f")


class TraceFormatError(ValueError):
    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")


@dataclass
class SensorTrace:
    t: np.ndarray
    reading: np.ndarray
    inhale_f: np.ndarray
    exhale_f: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.reading = np.asarray(self.reading, dtype=float)
        n = len(self.t)
        self.inhale_f = np.zeros(n) if self.inhale_f is None else np.asarray(self.inhale_f, float)
        self.exhale_f = np.zeros(n) if self.exhale_f is None else np.asarray(self.exhale_f, float)

    @classmethod
    def from_readings(cls, readings, sample_period=1.0):
        r = np.asarray(readings, dtype=float)
        return cls(np.arange(len(r)) * sample_period, r, None, None)

    def __len__(self):
        return len(self.t)

    @property
    def sample_period(self) -> float:
        return float(self.t[1] - self.t[0]) if len(self.t) > 1 else 1.0

    def scaled(self, k):
        return SensorTrace(self.t, self.reading * k, self.inhale_f, self.exhale_f)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_HEADER)
            for row in zip(self.t, self.reading, self.inhale_f, self.exhale_f):
                w.writerow([repr(float(x)) for x in row])

    @classmethod
    def from_csv(cls, path):
        cols = [[] for _ in TRACE_HEADER]
        with open(path, newline="") as fh:
            rows = csv.reader(fh)
            header = next(rows, None)
            if header is None or tuple(h.strip() for h in header) != TRACE_HEADER:
                raise TraceFormatError(1, f"expected header {','.join(TRACE_HEADER)}")
            for line, row in enumerate(rows, start=2):
                if len(row) != len(TRACE_HEADER):
                    raise TraceFormatError(line, f"expected {len(TRACE_HEADER)} fields, got {len(row)}")
                try:
                    vals = [float(x) for x in row]
                except ValueError as exc:
                    raise TraceFormatError(line, str(exc)) from None
                for col, x in zip(cols, vals):
                    col.append(x)
        return cls(*(np.array(c) for c in cols))


@dataclass
class MetricsReport:
    peak: float
    time_to_peak: float
    duration_above: float
    auc: float
    threshold: float
    post_off_peak: tuple | None = None
    cycle_count: int | None = None
    cycle_period_estimate: float | None = None

    def to_dict(self):
        d = asdict(self)
        if self.post_off_peak is not None:
            d["post_off_peak"] = {"time": self.post_off_peak[0], "value": self.post_off_peak[1]}
        return d


def default_threshold(trace: SensorTrace, background=0.0) -> float:
    return background + 0.1 * float(np.max(trace.reading))


def compute_metrics(trace: SensorTrace, threshold=None, motor_off_time=None,
                    background=0.0, expected_period=None) -> MetricsReport:
    if len(trace) == 0:
        raise EmptyTrace("trace has no samples")
    r = trace.reading
    if threshold is None:
        threshold = default_threshold(trace, background)
    k = int(np.argmax(r))
    report = MetricsReport(
        peak=float(r[k]),
        time_to_peak=float(trace.t[k]),
        duration_above=float(np.count_nonzero(r > threshold)) * trace.sample_period,
        auc=float(np.trapezoid(r, trace.t)) if len(r) > 1 else 0.0,
        threshold=float(threshold),
    )
    if motor_off_time is not None:
        report.post_off_peak = detect_post_off_peak(trace, motor_off_time)
    if expected_period is not None:
        report.cycle_count, report.cycle_period_estimate = detect_cycles(trace, expected_period)
    return report


def detect_post_off_peak(trace: SensorTrace, off_time: float):
    """Secondary rise after the motors stop, as ``(time, value)`` or None.

    The largest reading after ``off_time`` counts when it is at least 10 %
    above the reading at ``off_time`` and no lower than its neighbours (the
    last sample only has a left neighbour).
    """
    t, r = trace.t, trace.reading
    before = np.nonzero(t <= off_time)[0]
    after = np.nonzero(t > off_time)[0]
    if len(before) == 0 or len(after) == 0:
        return None
    base = r[before[-1]]
    k = after[int(np.argmax(r[after]))]
    peak = r[k]
    if not (peak > base and peak >= 1.1 * base):
        return None
    if r[k] < r[k - 1] or (k + 1 < len(r) and r[k] < r[k + 1]):
        return None
    return float(t[k]), float(peak)


def detect_cycles(trace: SensorTrace, expected_period: float, prominence=0.1):
    """Count maxima at least half a period apart; estimate the mean period.

    Maxima must stand out by ``prominence`` times the trace range so that
    sensor noise does not register as cycles.
    """
    dt = trace.sample_period
    if expected_period <= 2 * dt:
        raise ValueError("expected_period must exceed two sample periods")
    r = trace.reading
    span = float(r.max() - r.min()) if len(r) else 0.0
    if span <= 0:
        return 0, None
    distance = max(1, int(math.ceil(0.5 * expected_period / dt - 1e-9)))
    peaks, _ = find_peaks(r, distance=distance, prominence=prominence * span)
    if len(peaks) < 2:
        return len(peaks), None
    return len(peaks), float(np.mean(np.diff(trace.t[peaks])))


COMPARED = ("peak", "auc", "duration_above", "time_to_peak")


@dataclass
class Comparison:
    orderings: dict = field(default_factory=dict)
    ratios: dict = field(default_factory=dict)
    values: dict = field(default_factory=dict)

    def ordering_text(self, metric):
        return " > ".join(" = ".join(tier) for tier in self.orderings[metric])

    def rows(self):
        for metric, table in self.ratios.items():
            for (a, b), ratio in table.items():
                yield metric, a, b, self.values[metric][a], self.values[metric][b], ratio

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("metric", "scheme_a", "scheme_b", "value_a", "value_b", "ratio"))
            for row in self.rows():
                w.writerow([row[0], row[1], row[2]] + [repr(float(x)) for x in row[3:]])


def compare_schemes(reports: dict, metrics=COMPARED) -> Comparison:
    """Per metric: schemes ordered high to low (ties grouped) and pairwise ratios."""
    if len(reports) < 2:
        raise ValueError("need at least two reports to compare")
    out = Comparison()
    for metric in metrics:
        vals = {name: float(getattr(rep, metric)) for name, rep in reports.items()}
        tiers = []
        for name in sorted(vals, key=lambda n: (-vals[n], n)):
            if tiers and vals[tiers[-1][0]] == vals[name]:
                tiers[-1].append(name)
            else:
                tiers.append([name])
        ranked = [n for tier in tiers for n in tier]
        ratios = {}
        for i, a in enumerate(ranked):
            for b in ranked[i + 1:]:
                ratios[(a, b)] = vals[a] / vals[b] if vals[b] != 0 else (
                    1.0 if vals[a] == 0 else math.inf)
        out.orderings[metric] = tiers
        out.ratios[metric] = ratios
        out.values[metric] = vals
    return out


def write_report(report: MetricsReport, path):
    Path(path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
