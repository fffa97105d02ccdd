"""Rate/efficiency estimators, closed-form predictions and batch statistics.

Data rate R is information bits per slot of elapsed time (slots plus any
charged setup delay); energy efficiency E is information bits per
transmitted qubit.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from qtwp.quantum_core import (
    NoiseParams,
    apply_memory_noise,
    bell_probabilities,
    decode_superdense,
    encode_superdense,
    make_epr_pair,
    Qubit,
    BellOutcome,
)
from qtwp.sim_engine import Trace, fmt

QUARTILE_METHOD = "linear"

# (R, E) of the comparison schemes, delay-free
BASELINES = {
    "direct": (1.0, 2.0),
    "sdc_tdd": (1.0, 1.0),
    "ping_pong": (0.5, 0.5),
}


@dataclass(frozen=True)
class Metrics:
    rate: float
    efficiency: float
    sd_error_rate: float
    n_rounds: int
    n_slots: int
    n_qubits: int
    n_bits: int
    n_sd_bits: int
    n_sd_bit_errors: int
    delay: float = 0.0

    def as_row(self) -> dict:
        return {
            "R": self.rate,
            "E": self.efficiency,
            "err_rate": self.sd_error_rate,
            "rounds": self.n_rounds,
            "slots": self.n_slots,
            "qubits": self.n_qubits,
            "bits": self.n_bits,
            "sd_bits": self.n_sd_bits,
            "sd_bit_errors": self.n_sd_bit_errors,
            "delay": self.delay,
        }


def empirical_metrics(trace: Trace, upto_slot: Optional[int] = None) -> Metrics:
    """Metrics over all completed rounds, or over the rounds that started
    before ``upto_slot`` (the view a run with that slot horizon would give)."""
    rounds = trace.rounds
    if upto_slot is not None:
        rounds = [r for r in rounds if r.start_slot < upto_slot]
    if not rounds:
        raise ValueError("no completed rounds in trace")
    bits = sum(r.bits for r in rounds)
    slots = sum(r.slots for r in rounds)
    delay = math.fsum(r.delay for r in rounds)
    qubits = sum(r.qubits for r in rounds)
    elapsed = slots + delay
    if elapsed <= 0:
        raise ValueError("zero elapsed time")
    sd_bits = sum(len(r.sd_sent) for r in rounds)
    sd_err = sum(r.sd_errors for r in rounds)
    return Metrics(
        rate=bits / elapsed,
        efficiency=bits / qubits if qubits else math.nan,
        sd_error_rate=sd_err / sd_bits if sd_bits else math.nan,
        n_rounds=len(rounds),
        n_slots=slots,
        n_qubits=qubits,
        n_bits=bits,
        n_sd_bits=sd_bits,
        n_sd_bit_errors=sd_err,
        delay=delay,
    )


def cumulative_series(trace: Trace) -> dict[str, np.ndarray]:
    """Running R and E after every slot, from bits decoded so far.

    R(t) = bits decoded by slot t / (t + delay charged by slot t); E(t) is
    NaN until the first qubit is sent.
    """
    bits = np.cumsum(trace.slot_bits, dtype=float)
    qubits = np.cumsum(trace.slot_qubits, dtype=float)
    delay = np.cumsum(trace.slot_delay, dtype=float)
    slot = np.arange(1, len(bits) + 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        eff = np.where(qubits > 0, bits / np.maximum(qubits, 1), np.nan)
    return {"slot": slot, "cum_R": bits / (slot + delay), "cum_E": eff}


def sd_error_rate(trace: Trace) -> float:
    sent = sum(len(r.sd_sent) for r in trace.rounds)
    if not sent:
        raise ValueError("trace has no superdense-coded bits")
    return sum(r.sd_errors for r in trace.rounds) / sent


# ---------------------------------------------------------------- theory


@dataclass(frozen=True)
class TheoryPoint:
    rate: float
    efficiency: float
    bits: float  # expected bits per round
    slots: float  # expected slots per round


def theory_ideal() -> tuple[float, float]:
    return 1.5, 3.0


def theory_decoherence(coherence: int) -> TheoryPoint:
    """Expected per-round bits/slots and the resulting (R, E) when the pair
    must be used within ``coherence`` slots."""
    if int(coherence) != coherence or coherence < 2:
        raise ValueError(f"coherence budget must be an integer >= 2, got {coherence}")
    m = coherence - 2
    bits = 6 - 2.0 ** -(m - 1)
    slots = 4 - 0.5 ** m
    x = 2.0 ** -(coherence - 1)
    rate = 1 + (1 - x) / (2 - x)
    efficiency = 3 - 4 / 2.0 ** coherence
    return TheoryPoint(rate, efficiency, bits, slots)


def theory_delay(delta: float, coherence: Optional[int] = None, rounds_per_swap: int = 1) -> float:
    """R with a per-swap setup delay ``delta`` amortised over
    ``rounds_per_swap`` rounds. E does not depend on the delay."""
    if delta < 0:
        raise ValueError("delta must be >= 0")
    if rounds_per_swap < 1:
        raise ValueError("rounds_per_swap must be >= 1")
    d = delta / rounds_per_swap
    x = 0.0 if coherence is None else 2.0 ** -(coherence - 1)
    if coherence is not None and coherence < 2:
        raise ValueError("coherence budget must be >= 2")
    return 1 + (1 - x - d / 2) / (2 - x + d / 2)


def gap_pmf(coherence: Optional[int], kmax: int = 64) -> np.ndarray:
    """Distribution of the zero run between the two qubits of a round."""
    k = np.arange(kmax + 1)
    p = 0.5 ** (k + 1)
    if coherence is not None:
        m = coherence - 2
        p = p[: m + 1].copy()
        p[m] = 0.5 ** m
    return p


def sd_outcome_distribution(exposure: int, noise: NoiseParams, payload: tuple[int, int]) -> np.ndarray:
    """Exact Bell-outcome probabilities for one superdense transfer whose two
    qubits each sat ``exposure`` slots in memory before the encoding."""
    pair = make_epr_pair(0)
    pair = apply_memory_noise(pair, Qubit.A, exposure, noise)
    pair = apply_memory_noise(pair, Qubit.B, exposure, noise)
    p = bell_probabilities(encode_superdense(pair, *payload))
    return p / p.sum()


def _bit_errors(payload: tuple[int, int]) -> np.ndarray:
    return np.array([sum(a != b for a, b in zip(payload, decode_superdense(o))) for o in BellOutcome])


def sd_error_moments(exposure: int, noise: NoiseParams) -> tuple[float, float]:
    """Mean and variance of the number of wrong bits (0, 1 or 2) in one
    superdense transfer, with the payload uniform over the four encodings."""
    mean = second = 0.0
    for b0 in (0, 1):
        for b1 in (0, 1):
            p = sd_outcome_distribution(exposure, noise, (b0, b1))
            e = _bit_errors((b0, b1))
            mean += float(p @ e) / 4
            second += float(p @ e ** 2) / 4
    return mean, second - mean ** 2


def expected_sd_error_rate(noise: NoiseParams, coherence: Optional[int] = None, exposure: Optional[int] = None) -> float:
    """Per-bit superdense error probability.

    With ``exposure`` fixed, each qubit spends exactly that many slots in
    memory. Otherwise the exposure is gap+1 with the gap distributed as in a
    round of the protocol with the given coherence budget.
    """
    if exposure is not None:
        return sd_error_moments(exposure, noise)[0] / 2
    pmf = gap_pmf(coherence)
    return float(sum(p * sd_error_moments(k + 1, noise)[0] / 2 for k, p in enumerate(pmf) if p > 1e-18))


def ratio_standard_error(numer: Sequence[float], denom: Sequence[float]) -> tuple[float, float]:
    """Ratio-of-sums estimate and its delta-method standard error, treating
    (numer[i], denom[i]) as i.i.d. units."""
    x = np.asarray(numer, dtype=float)
    y = np.asarray(denom, dtype=float)
    n = len(x)
    if n < 2:
        raise ValueError("need at least two units")
    r = x.sum() / y.sum()
    resid = x - r * y
    se = math.sqrt(resid.var(ddof=1) / n) / y.mean()
    return r, se


def block_rate_standard_error(trace: Trace) -> tuple[float, float]:
    """R and its standard error with each swap block as one unit (the delay
    is charged once per block, so blocks are the i.i.d. pieces)."""
    n = trace.config.rounds_per_swap
    rounds = trace.rounds
    blocks = len(rounds) // n
    b = np.array([r.bits for r in rounds[: blocks * n]], dtype=float).reshape(blocks, n).sum(axis=1)
    t = np.array([r.slots + r.delay for r in rounds[: blocks * n]], dtype=float).reshape(blocks, n).sum(axis=1)
    return ratio_standard_error(b, t)


# ----------------------------------------------------------------- batches


@dataclass(frozen=True)
class BatchSummary:
    n: int
    mean: float
    std: float
    q1: float
    median: float
    q3: float
    iqr: float
    outliers: tuple[float, ...] = field(default=())
    quartile_method: str = QUARTILE_METHOD

    @property
    def standard_error(self) -> float:
        return self.std / math.sqrt(self.n) if self.n > 1 else math.nan

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "mean": self.mean,
            "std": self.std,
            "q1": self.q1,
            "median": self.median,
            "q3": self.q3,
            "iqr": self.iqr,
            "outliers": list(self.outliers),
            "quartile_method": self.quartile_method,
        }


def batch_stats(samples: Iterable[float]) -> BatchSummary:
    """Boxplot statistics with linear-interpolation quartiles; a sample is an
    outlier if it lies strictly beyond 1.5 IQR from the box."""
    x = np.asarray(list(samples), dtype=float)
    x = x[~np.isnan(x)]
    if x.size == 0:
        raise ValueError("no samples")
    q1, med, q3 = np.percentile(x, [25, 50, 75], method=QUARTILE_METHOD)
    iqr = q3 - q1
    lo, hi = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    outliers = tuple(float(v) for v in x if v < lo or v > hi)
    std = float(x.std(ddof=1)) if x.size > 1 else 0.0
    return BatchSummary(int(x.size), float(x.mean()), std, float(q1), float(med), float(q3), float(iqr), outliers)


# -------------------------------------------------------------- CSV output


def rows_to_csv(header: Sequence[str], rows: Iterable[Sequence], echo: Optional[str] = None) -> str:
    out = io.StringIO()
    if echo is not None:
        out.write(f"# config={echo}\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if v is None else (v if isinstance(v, str) else fmt(v)) for v in row])
    return out.getvalue()


def theory_table_csv(coherence_values: Sequence[int] = (), delta: float = 0.0, rounds_per_swap: int = 1,
                     echo: Optional[str] = None) -> str:
    header = ["scheme", "c", "delta", "n", "R_theory", "E_theory", "B", "T"]
    rows = []
    for c in coherence_values:
        p = theory_decoherence(c)
        rows.append(["proposed", c, delta, rounds_per_swap, theory_delay(delta, c, rounds_per_swap),
                     p.efficiency, p.bits, p.slots])
    rate_ideal = theory_delay(delta, None, rounds_per_swap)
    rows.append(["proposed", "inf", delta, rounds_per_swap, rate_ideal, theory_ideal()[1], 6.0, 4.0])
    for name, (r, e) in BASELINES.items():
        rows.append([name, "", 0.0, 1, r, e, None, None])
    return rows_to_csv(header, rows, echo)


def series_csv(trace: Trace, echo: Optional[str] = None) -> str:
    s = cumulative_series(trace)
    return rows_to_csv(["slot", "cum_R", "cum_E"], zip(s["slot"], s["cum_R"], s["cum_E"]), echo)
