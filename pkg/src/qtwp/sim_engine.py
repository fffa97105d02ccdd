"""Slot-synchronous two-user simulator.

One user transmits per slot (half duplex); U1 starts. The transmitter role
passes to the other user after every ``rounds_per_swap`` completed rounds,
and each such block of rounds is charged a real-valued setup delay that is
added to elapsed time without shifting the integer slot grid.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple, Optional

import numpy as np

from qtwp.protocol import (
    ActionKind,
    BitBuffer,
    BufferExhausted,
    ProtocolMode,
    ReceiverState,
    RoundRecord,
    SenderState,
    baseline_direct,
    baseline_ping_pong,
    baseline_sdc_tdd,
    receiver_step,
    sender_step,
)
from qtwp.quantum_core import (
    CoherenceBudget,
    NoiseParams,
    PairState,
    Qubit,
    apply_memory_noise,
    bell_measure,
    fixed_coherence_measure,
)

log = logging.getLogger(__name__)

MODES = ("quantum_ideal", "quantum_variant", "direct", "sdc_tdd", "ping_pong")
NOISE_KINDS = ("none", "cliff", "t1t2")
QUANTUM_MODES = ("quantum_ideal", "quantum_variant")
USERS = ("U1", "U2")
DIRECTIONS = ("U1->U2", "U2->U1")


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class SimConfig:
    """Everything that determines a run.

    Exactly one of ``slots``/``rounds`` sets the horizon. With ``slots``, every
    round that starts before that slot is played out to its end, so the trace
    can run a few slots past the horizon; no round is ever cut short.
    """

    mode: str = "quantum_ideal"
    coherence: Optional[int] = None
    noise: str = "none"
    t1: float = 20.0
    t2: float = 18.0
    delta: float = 0.0
    rounds_per_swap: int = 1
    seed: int = 0
    slots: Optional[int] = 1000
    rounds: Optional[int] = None
    record_trace: bool = False
    include_presharing: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError("mode", f"unknown mode {self.mode!r}")
        if self.noise not in NOISE_KINDS:
            raise ConfigError("noise", f"unknown noise model {self.noise!r}")
        if self.coherence is not None and (int(self.coherence) != self.coherence or self.coherence < 2):
            raise ConfigError("c", f"coherence budget must be an integer >= 2, got {self.coherence}")
        if self.mode == "quantum_variant" and self.coherence is None:
            raise ConfigError("c", "c required for quantum_variant")
        if self.noise == "cliff":
            if self.coherence is None:
                raise ConfigError("c", "c required for cliff noise")
            if self.mode not in QUANTUM_MODES:
                raise ConfigError("noise", f"cliff noise needs a quantum mode, not {self.mode}")
        if self.noise == "t1t2":
            if self.mode in ("direct", "ping_pong"):
                raise ConfigError("noise", f"t1t2 noise is not defined for {self.mode}")
            try:
                NoiseParams(self.t1, self.t2)
            except ValueError as e:
                raise ConfigError("t2" if self.t1 > 0 else "t1", str(e)) from None
        if not (self.delta >= 0 and math.isfinite(self.delta)):
            raise ConfigError("delta", f"delta must be a finite value >= 0, got {self.delta}")
        if self.rounds_per_swap < 1:
            raise ConfigError("rounds_per_swap", f"must be >= 1, got {self.rounds_per_swap}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed", "seed must be a 64-bit unsigned integer")
        if (self.slots is None) == (self.rounds is None):
            raise ConfigError("slots", "give exactly one of slots or rounds as the horizon")
        horizon = self.slots if self.slots is not None else self.rounds
        if horizon < 1:
            raise ConfigError("slots" if self.slots is not None else "rounds", "horizon must be >= 1")

    @property
    def noise_params(self) -> Optional[NoiseParams]:
        return NoiseParams(self.t1, self.t2) if self.noise == "t1t2" else None

    @property
    def protocol_mode(self) -> ProtocolMode:
        if self.mode == "quantum_variant":
            return ProtocolMode.with_coherence(self.coherence)
        return ProtocolMode.ideal()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


class SlotEvent(NamedTuple):
    slot: int
    direction: str
    kind: str  # silent | first | second
    pair_id: int
    bits: tuple[int, ...]
    round_id: int


@dataclass
class Trace:
    config: SimConfig
    rounds: list[RoundRecord] = field(default_factory=list)
    events: list[SlotEvent] = field(default_factory=list)
    # per-slot columns, always recorded
    slot_bits: list[int] = field(default_factory=list)
    slot_qubits: list[int] = field(default_factory=list)
    slot_delay: list[float] = field(default_factory=list)
    discarded_qubits: int = 0
    termination: str = "horizon"

    @property
    def n_slots(self) -> int:
        return len(self.slot_bits)

    @property
    def qubits(self) -> int:
        return sum(r.qubits for r in self.rounds)

    @property
    def delay_charged(self) -> float:
        return math.fsum(r.delay for r in self.rounds)

    @property
    def elapsed(self) -> float:
        return sum(r.slots for r in self.rounds) + self.delay_charged


def derive_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    """U1 buffer, U2 buffer, measurement randomness."""
    children = np.random.SeedSequence(seed).spawn(3)
    return tuple(np.random.default_rng(s) for s in children)


def charge_round_delay(clock: float, round_index: int, config: SimConfig) -> float:
    """Add the setup delay if ``round_index`` (1-based) opens a block of
    ``rounds_per_swap`` rounds."""
    if round_index < 1:
        raise ValueError("round_index is 1-based")
    if (round_index - 1) % config.rounds_per_swap == 0:
        return clock + config.delta
    return clock


def apply_noise_schedule(pair: PairState, slot: int, noise: Optional[NoiseParams]) -> PairState:
    """State of ``pair`` when its second qubit leaves at ``slot``.

    Both halves sit in memory (A at the sender, B at the receiver) from the
    generation slot until ``slot``; transit itself is noiseless.
    """
    if noise is None:
        return pair
    exposure = slot - pair.generated_at
    pair = apply_memory_noise(pair, Qubit.A, exposure, noise)
    return apply_memory_noise(pair, Qubit.B, exposure, noise)


class _Timeline:
    """Per-slot bookkeeping shared by the quantum and baseline drivers."""

    def __init__(self, trace: Trace):
        self.trace = trace
        self.record = trace.config.record_trace
        self.bits = trace.slot_bits
        self.qubits = trace.slot_qubits
        self.delay = trace.slot_delay

    def add(self, slot: int, tx: int, kind: str, pair_id: int, bits: tuple[int, ...], round_id: int,
            delay: float) -> None:
        self.bits.append(len(bits))
        self.qubits.append(0 if kind == "silent" else 1)
        self.delay.append(delay)
        if self.record:
            self.trace.events.append(SlotEvent(slot, DIRECTIONS[tx], kind, pair_id, bits, round_id))


def _run_quantum(cfg: SimConfig, trace: Trace) -> None:
    buf_rngs = derive_streams(cfg.seed)
    buffers = (BitBuffer(rng=buf_rngs[0]), BitBuffer(rng=buf_rngs[1]))
    meas_rng = buf_rngs[2]
    mode = cfg.protocol_mode
    noise = cfg.noise_params
    timeline = _Timeline(trace)

    hook = None
    if noise is not None:
        def hook(pair, at):
            return apply_noise_schedule(pair, at, noise)

    slot = 0
    if cfg.noise == "cliff":
        budget = CoherenceBudget(cfg.coherence)

        def measure(pair, rng):
            return fixed_coherence_measure(pair, slot, budget, rng)
    else:
        measure = bell_measure

    max_slots = cfg.slots if cfg.slots is not None else math.inf
    max_rounds = cfg.rounds if cfg.rounds is not None else math.inf
    snd, rcv = SenderState(), ReceiverState()
    tx = 0
    done_rounds = 0
    round_start = 0
    first_slot = -1
    round_bits = 0
    round_delay = 0.0
    rounds = trace.rounds
    record = cfg.record_trace
    slot_bits, slot_qubits, slot_delay = trace.slot_bits, trace.slot_qubits, trace.slot_delay
    delta, per_swap = cfg.delta, cfg.rounds_per_swap

    # a round that starts before the slot horizon runs to completion
    while done_rounds < max_rounds and (slot < max_slots or slot != round_start):
        opening = slot == round_start
        charged = 0.0
        if opening:
            charged = round_delay = delta if done_rounds % per_swap == 0 else 0.0
        try:
            action, snd = sender_step(snd, buffers[tx], mode, slot, hook)
        except BufferExhausted:
            trace.termination = "buffer_exhausted"
            break
        kind = action.kind
        bits, rcv, closed = receiver_step(rcv, action.pair, mode, meas_rng, measure)
        round_bits += len(bits)
        if kind is ActionKind.FIRST:
            first_slot = slot
        if record:
            timeline.add(slot, tx, kind.value, -1 if kind is ActionKind.SILENT else done_rounds,
                         bits, done_rounds, charged)
        else:
            slot_bits.append(len(bits))
            slot_qubits.append(0 if kind is ActionKind.SILENT else 1)
            slot_delay.append(charged)
        if closed:
            k1 = first_slot - round_start
            rounds.append(RoundRecord(
                bits=round_bits, slots=slot - round_start + 1, qubits=2, k1=k1, k2=action.gap,
                stuffed=action.stuffed, sd_sent=action.payload, sd_decoded=bits[-2:], user=tx,
                end_slot=slot, delay=round_delay,
            ))
            done_rounds += 1
            round_bits = 0
            round_start = slot + 1
            if done_rounds % per_swap == 0:
                tx = 1 - tx
        slot += 1

    if snd.held_pair is not None:
        trace.discarded_qubits = 1


def _baseline_rounds(cfg: SimConfig, buffer: BitBuffer, rng: np.random.Generator) -> Iterator[RoundRecord]:
    if cfg.mode == "direct":
        return baseline_direct(buffer)
    if cfg.mode == "sdc_tdd":
        return baseline_sdc_tdd(buffer, rng, cfg.noise_params, cfg.include_presharing)
    return baseline_ping_pong(buffer, rng)


def _baseline_slots(cfg: SimConfig, rec: RoundRecord, tx: int) -> list[tuple[int, str, tuple[int, ...]]]:
    """Lay a baseline round onto slots as (sender, kind, decoded bits)."""
    if cfg.mode == "direct":
        return [(tx, "silent", (0,))] * rec.k1 + [(tx, "first", (1,))]
    if cfg.mode == "sdc_tdd":
        tail = [(tx, "second", rec.sd_decoded)]
        return ([(tx, "first", ())] + tail) if cfg.include_presharing else tail
    # ping-pong: the travel qubit goes receiver -> sender first
    return [(1 - tx, "first", ()), (tx, "second", rec.sd_decoded)]


def _run_baseline(cfg: SimConfig, trace: Trace) -> None:
    buf_rngs = derive_streams(cfg.seed)
    meas_rng = buf_rngs[2]
    sources = [_baseline_rounds(cfg, BitBuffer(rng=buf_rngs[u]), meas_rng) for u in (0, 1)]
    timeline = _Timeline(trace)
    max_slots = cfg.slots if cfg.slots is not None else math.inf
    max_rounds = cfg.rounds if cfg.rounds is not None else math.inf
    rounds = trace.rounds
    tx = 0
    slot = 0
    while slot < max_slots and len(rounds) < max_rounds:
        idx = len(rounds)
        delay = cfg.delta if idx % cfg.rounds_per_swap == 0 else 0.0
        rec = next(sources[tx], None)
        if rec is None:
            trace.termination = "buffer_exhausted"
            break
        layout = _baseline_slots(cfg, rec, tx)
        if timeline.record:
            for j, (sender, kind, bits) in enumerate(layout):
                timeline.add(slot + j, sender, kind, idx if kind != "silent" else -1, bits, idx,
                             delay if j == 0 else 0.0)
        else:
            timeline.bits.extend([len(b) for _, _, b in layout])
            timeline.qubits.extend([0 if k == "silent" else 1 for _, k, _ in layout])
            timeline.delay.append(delay)
            timeline.delay.extend([0.0] * (len(layout) - 1))
        slot += len(layout)
        rounds.append(rec._replace(user=tx, end_slot=slot - 1, delay=delay))
        if len(rounds) % cfg.rounds_per_swap == 0:
            tx = 1 - tx


def run_simulation(config: SimConfig) -> Trace:
    trace = Trace(config)
    if config.mode in QUANTUM_MODES:
        _run_quantum(config, trace)
    else:
        _run_baseline(config, trace)
    log.debug("run seed=%d mode=%s: %d slots, %d rounds", config.seed, config.mode, trace.n_slots,
              len(trace.rounds))
    return trace


def worker_count() -> int:
    n = os.cpu_count() or 1
    cap = os.environ.get("QTWP_THREADS")
    if cap:
        n = min(n, max(1, int(cap)))
    return n


def run_many(configs: Iterable[SimConfig], fn=run_simulation, workers: Optional[int] = None) -> list:
    """Apply ``fn`` to every config, possibly in worker processes.
    Results come back in input order."""
    configs = list(configs)
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(configs) < 2:
        return [fn(c) for c in configs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, configs, chunksize=max(1, len(configs) // (4 * workers))))


def fmt(x) -> str:
    """Fixed text form for numbers in output files."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def trace_to_csv(trace: Trace, echo: Optional[dict] = None) -> str:
    """One row per slot. Needs a trace recorded with ``record_trace``."""
    if not trace.config.record_trace:
        raise ValueError("trace was run without record_trace")
    out = io.StringIO()
    out.write("# config=" + json.dumps(echo if echo is not None else trace.config.to_dict(),
                                        sort_keys=True) + "\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["slot", "direction", "tx_kind", "pair_id", "bits_decoded", "cum_R", "cum_E"])
    bits = qubits = 0
    delay = 0.0
    for ev, d in zip(trace.events, trace.slot_delay):
        bits += len(ev.bits)
        qubits += ev.kind != "silent"
        delay += d
        cum_r = bits / (ev.slot + 1 + delay)
        cum_e = bits / qubits if qubits else math.nan
        w.writerow([ev.slot, ev.direction, ev.kind, ev.pair_id, "".join(map(str, ev.bits)),
                    fmt(cum_r), fmt(cum_e)])
    return out.getvalue()
