"""Quantitative evaluation: SNR, fixed-point residual traces, sweep summaries."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np


def snr_db(estimate: np.ndarray, truth: np.ndarray) -> float:
    """Signal-to-noise ratio 20*log10(||truth|| / ||truth - estimate||) in dB.

    Returns +inf when the estimate matches the truth exactly; rejects an
    all-zero truth (the ratio is undefined).
    """
    estimate = np.asarray(estimate, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if estimate.shape != truth.shape:
        raise ValueError(f"length mismatch: {estimate.size} vs {truth.size}")
    signal = float(np.linalg.norm(truth))
    if signal == 0.0:
        raise ValueError("truth vector is identically zero")
    with np.errstate(over="ignore"):
        err = float(np.linalg.norm(truth - estimate))
    if err == 0.0:
        return float("inf")
    if np.isinf(err):  # diverged estimate: error norm overflows
        return float("-inf")
    return 20.0 * float(np.log10(signal / err))


def reconstruction_snr_db(estimate: np.ndarray, truth: np.ndarray) -> float:
    """Image SNR with the global sign ambiguity of magnitude-only data resolved.

    Magnitude measurements cannot distinguish x from -x, so both signs are
    scored and the better one reported.
    """
    return max(snr_db(estimate, truth), snr_db(-np.asarray(estimate), truth))


@dataclass
class TraceRow:
    """Per-iteration record of one solver run."""

    k: int
    grad_norm_sq: float  # squared norm of the full RED residual at iterate k
    norm_acc: float  # grad_norm_sq relative to row 0
    snr_db: float | None = None
    sampled_indices: list[int] = field(default_factory=list)
    wall_ms: float = 0.0


@dataclass
class RunTrace:
    """Logged rows of one run plus whether it started at a fixed point."""

    rows: list[TraceRow] = field(default_factory=list)
    started_at_fixed_point: bool = False

    def final_norm_acc(self) -> float:
        if not self.rows:
            raise ValueError("empty trace")
        return self.rows[-1].norm_acc

    def min_norm_acc(self) -> float:
        if not self.rows:
            raise ValueError("empty trace")
        return min(r.norm_acc for r in self.rows)


def normalized_accuracy(rows: list[TraceRow]) -> tuple[list[float], bool]:
    """Residuals relative to the starting residual; row 0 maps to 1.0.

    A zero starting residual means the run began at a fixed point: all
    entries are reported as 0.0 and the flag is set.
    """
    if not rows:
        raise ValueError("empty trace")
    ref = rows[0].grad_norm_sq
    if ref == 0.0:
        return [0.0] * len(rows), True
    return [r.grad_norm_sq / ref for r in rows], False


TRACE_COLUMNS = ["k", "grad_norm_sq", "norm_acc", "snr_db", "sampled_indices", "wall_ms"]


def trace_to_csv(trace: RunTrace, include_timing: bool = False) -> str:
    """Render a trace as CSV.

    Timing is suppressed (written as 0) unless include_timing is set, so
    that artifacts from identical configurations are byte-identical.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for r in trace.rows:
        writer.writerow(
            [
                r.k,
                repr(r.grad_norm_sq),
                repr(r.norm_acc),
                "" if r.snr_db is None else ("inf" if np.isinf(r.snr_db) else repr(r.snr_db)),
                ";".join(str(i) for i in r.sampled_indices),
                repr(r.wall_ms) if include_timing else "0",
            ]
        )
    return buf.getvalue()


def trace_from_csv(text: str) -> RunTrace:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header != TRACE_COLUMNS:
        raise ValueError(f"unexpected trace columns {header}")
    rows = []
    for rec in reader:
        if not rec:
            continue
        snr = None
        if rec[3] != "":
            snr = float("inf") if rec[3] == "inf" else float(rec[3])
        rows.append(
            TraceRow(
                k=int(rec[0]),
                grad_norm_sq=float(rec[1]),
                norm_acc=float(rec[2]),
                snr_db=snr,
                sampled_indices=[int(s) for s in rec[4].split(";") if s],
                wall_ms=float(rec[5]),
            )
        )
    started_fixed = bool(rows) and rows[0].grad_norm_sq == 0.0
    return RunTrace(rows=rows, started_at_fixed_point=started_fixed)


@dataclass
class SweepCell:
    """Aggregate of all runs sharing one (gamma, minibatch) cell."""

    gamma: float
    batch: int
    runs: int
    final_norm_acc_mean: float
    final_norm_acc_std: float
    min_norm_acc_mean: float


def aggregate_sweep(traces: dict[tuple[float, int, int], RunTrace]) -> list[SweepCell]:
    """Per-(gamma, B) mean and standard deviation of the final normalized
    accuracy across seeds; the running-minimum mean is logged alongside.
    """
    if not traces:
        raise ValueError("no traces to aggregate")
    cells: dict[tuple[float, int], list[RunTrace]] = {}
    for (gamma, batch, _seed), trace in traces.items():
        cells.setdefault((gamma, batch), []).append(trace)
    out = []
    for (gamma, batch) in sorted(cells):
        finals = np.array([t.final_norm_acc() for t in cells[(gamma, batch)]])
        mins = np.array([t.min_norm_acc() for t in cells[(gamma, batch)]])
        out.append(
            SweepCell(
                gamma=gamma,
                batch=batch,
                runs=len(finals),
                final_norm_acc_mean=float(finals.mean()),
                final_norm_acc_std=float(finals.std(ddof=0)),
                min_norm_acc_mean=float(mins.mean()),
            )
        )
    return out


SUMMARY_COLUMNS = [
    "gamma",
    "B",
    "runs",
    "final_norm_acc_mean",
    "final_norm_acc_std",
    "min_norm_acc_mean",
]


def sweep_summary_csv(cells: list[SweepCell]) -> str:
    """Summary table with fixed six-significant-digit scientific formatting."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SUMMARY_COLUMNS)
    for c in cells:
        writer.writerow(
            [
                f"{c.gamma:.5e}",
                c.batch,
                c.runs,
                f"{c.final_norm_acc_mean:.5e}",
                f"{c.final_norm_acc_std:.5e}",
                f"{c.min_norm_acc_mean:.5e}",
            ]
        )
    return buf.getvalue()
