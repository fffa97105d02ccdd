"""Sender/receiver state machines for the pair-based two-way protocol, and
the baseline schemes it is compared against.

A round on the wire is ``0^k1 1 0^k2 1``: the first ``1`` ships half of a
fresh EPR pair, the second ``1`` ships the other half with two extra bits
superdense-coded into it. Receiving the second qubit hands the transmitter
role to the other user.

With a finite coherence budget the gap ``k2`` is capped: after
``stuff_after`` zeros the sender forces the second qubit out (a stuffed
``1`` that carries no data bit of its own).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Iterator, NamedTuple, Optional, Sequence

import numpy as np

from qtwp.quantum_core import (
    BellOutcome,
    NoiseParams,
    PairState,
    Qubit,
    apply_memory_noise,
    bell_measure,
    decode_superdense,
    encode_superdense,
    make_epr_pair,
)


class ProtocolError(Exception):
    pass


class BufferExhausted(ProtocolError):
    """The sender needed more input bits than its buffer holds."""


class ProtocolViolation(ProtocolError):
    """The receiver observed a slot pattern no valid sender can produce."""


class BitBuffer:
    """A user's input bits, read front to back.

    Either a finite sequence, or (with ``rng``) an unbounded stream of i.i.d.
    uniform bits generated in fixed-size chunks, so the contents depend only
    on the generator state and never on how far the caller reads.
    """

    def __init__(self, bits: Optional[Sequence[int]] = None, rng: Optional[np.random.Generator] = None,
                 chunk: int = 4096):
        if (bits is None) == (rng is None):
            raise ValueError("give exactly one of bits or rng")
        self._bits = [int(b) for b in bits] if bits is not None else []
        if any(b not in (0, 1) for b in self._bits):
            raise ValueError("bits must be 0 or 1")
        self._rng = rng
        self._chunk = chunk
        self.cursor = 0

    @classmethod
    def from_string(cls, s: str) -> "BitBuffer":
        return cls([int(ch) for ch in s])

    @property
    def finite(self) -> bool:
        return self._rng is None

    def has(self, n: int) -> bool:
        while self._rng is not None and len(self._bits) < self.cursor + n:
            self._bits.extend(self._rng.integers(0, 2, size=self._chunk, dtype=np.uint8).tolist())
        return len(self._bits) >= self.cursor + n

    def peek(self) -> int:
        if not self.has(1):
            raise BufferExhausted("buffer empty")
        return self._bits[self.cursor]

    def read(self, n: int = 1) -> list[int]:
        if not self.has(n):
            raise BufferExhausted(f"need {n} bits, {len(self._bits) - self.cursor} left")
        out = self._bits[self.cursor:self.cursor + n]
        self.cursor += n
        return out

    def read_bit(self) -> int:
        if self.cursor >= len(self._bits) and not self.has(1):
            raise BufferExhausted("buffer empty")
        bit = self._bits[self.cursor]
        self.cursor += 1
        return bit

    @property
    def consumed(self) -> list[int]:
        return self._bits[:self.cursor]


@dataclass(frozen=True)
class ProtocolMode:
    """``stuff_after=None`` is the ideal protocol (no coherence limit);
    otherwise the second qubit is forced out after that many zeros."""

    stuff_after: Optional[int] = None

    def __post_init__(self):
        if self.stuff_after is not None and self.stuff_after < 0:
            raise ValueError(f"stuff_after must be >= 0, got {self.stuff_after}")

    @classmethod
    def ideal(cls) -> "ProtocolMode":
        return cls(None)

    @classmethod
    def with_coherence(cls, slots: int) -> "ProtocolMode":
        if slots < 2:
            raise ValueError(f"coherence budget must be >= 2, got {slots}")
        return cls(slots - 2)

    @property
    def is_ideal(self) -> bool:
        return self.stuff_after is None


class SenderPhase(enum.Enum):
    S0 = "S0"  # no qubit of the current round sent yet
    S1 = "S1"  # first qubit sent, holding the other half


class ReceiverPhase(enum.Enum):
    R0 = "R0"
    R1 = "R1"


class ActionKind(enum.Enum):
    SILENT = "silent"
    FIRST = "first"
    SECOND = "second"


class SenderState(NamedTuple):
    phase: SenderPhase = SenderPhase.S0
    zeros_sent: int = 0
    held_pair: Optional[PairState] = None


class ReceiverState(NamedTuple):
    phase: ReceiverPhase = ReceiverPhase.R0
    zeros_seen: int = 0
    stored_pair: Optional[PairState] = None


class SlotAction(NamedTuple):
    kind: ActionKind
    pair: Optional[PairState] = None
    payload: Optional[tuple[int, int]] = None
    stuffed: bool = False
    gap: int = 0  # zeros between the two qubits (second qubit only)

    @property
    def transmits(self) -> bool:
        return self.kind is not ActionKind.SILENT


SILENT = SlotAction(ActionKind.SILENT)
_IDLE_SENDER = SenderState()
_IDLE_RECEIVER = ReceiverState()

PairHook = Callable[[PairState, int], PairState]
MeasureFn = Callable[[PairState, np.random.Generator], BellOutcome]


def sender_step(state: SenderState, buffer: BitBuffer, mode: ProtocolMode, slot: int,
                before_encode: Optional[PairHook] = None) -> tuple[SlotAction, SenderState]:
    """Advance the transmitter by one slot.

    ``before_encode(pair, slot)`` is applied to the held pair right before the
    superdense encoding; the simulator uses it to apply memory noise.

    Raises ``BufferExhausted`` without consuming anything if the step needs
    more bits than remain (the SD payload is checked together with the bit
    that triggers it).
    """
    if state.phase is SenderPhase.S0:
        if buffer.read_bit() == 0:
            return SILENT, state
        pair = make_epr_pair(slot)
        return SlotAction(ActionKind.FIRST, pair), SenderState(SenderPhase.S1, 0, pair)

    zeros = state.zeros_sent
    stuffed = mode.stuff_after is not None and zeros >= mode.stuff_after
    if not stuffed:
        if buffer.read_bit() == 0:
            return SILENT, SenderState(SenderPhase.S1, zeros + 1, state.held_pair)
        if not buffer.has(2):
            buffer.cursor -= 1
            raise BufferExhausted("superdense payload missing")
    b0, b1 = buffer.read(2)
    pair = state.held_pair
    if before_encode is not None:
        pair = before_encode(pair, slot)
    action = SlotAction(ActionKind.SECOND, encode_superdense(pair, b0, b1), (b0, b1), stuffed, zeros)
    return action, _IDLE_SENDER


def receiver_step(state: ReceiverState, observation: Optional[PairState], mode: ProtocolMode,
                  rng: np.random.Generator, measure: MeasureFn = bell_measure
                  ) -> tuple[tuple[int, ...], ReceiverState, bool]:
    """Advance the receiver by one slot.

    ``observation`` is None for a silent slot, otherwise the arriving pair.
    Returns the decoded bits, the new state, and whether the round closed
    (which is what hands over the transmitter role).
    """
    if state.phase is ReceiverPhase.R0:
        if observation is None:
            return (0,), state, False
        return (1,), ReceiverState(ReceiverPhase.R1, 0, observation), False

    if observation is None:
        return (), ReceiverState(ReceiverPhase.R1, state.zeros_seen + 1, state.stored_pair), False

    s = state.zeros_seen
    sd = decode_superdense(measure(observation, rng))
    m = mode.stuff_after
    if m is None or s < m:
        bits = (0,) * s + (1,) + sd
    elif s == m:
        bits = (0,) * s + sd
    else:
        raise ProtocolViolation(f"{s} zeros after first qubit, at most {m} allowed")
    return bits, _IDLE_RECEIVER, True


def stuff_transform(bits, stuff_after: Optional[int]):
    """Insert stuffed ``1``s into an input stream the way the sender does.

    Superdense payload bits stay in place, so the output is the stream as the
    receiver decodes it with stuffing bits made explicit. A ``str`` input
    gives a ``str`` output; anything else gives a list of ints.
    """
    as_str = isinstance(bits, str)
    src = [int(b) for b in bits]
    out: list[int] = []
    i, n = 0, len(src)
    while i < n:
        b = src[i]
        i += 1
        out.append(b)
        if b == 0:
            continue
        zeros = 0
        while True:
            if stuff_after is not None and zeros >= stuff_after:
                out.append(1)
                break
            if i >= n:
                break
            b = src[i]
            i += 1
            out.append(b)
            if b == 1:
                break
            zeros += 1
        out.extend(src[i:i + 2])
        i += 2
    return "".join(map(str, out)) if as_str else out


class RoundRecord(NamedTuple):
    """Accounting for one completed round.

    ``delay`` is the setup charge (in slot-equivalents) attributed to this
    round; ``end_slot`` is the last slot of the round (-1 if not placed on a
    timeline).
    """

    bits: int
    slots: int
    qubits: int
    k1: int = 0
    k2: int = 0
    stuffed: bool = False
    sd_sent: tuple[int, ...] = ()
    sd_decoded: tuple[int, ...] = ()
    user: int = 0
    end_slot: int = -1
    delay: float = 0.0

    @property
    def start_slot(self) -> int:
        return self.end_slot - self.slots + 1

    @property
    def sd_errors(self) -> int:
        return sum(a != b for a, b in zip(self.sd_sent, self.sd_decoded))


def quantum_round_bits(k1: int, k2: int, stuffed: bool) -> int:
    return k1 + k2 + (3 if stuffed else 4)


def _read_run(buffer: BitBuffer) -> Optional[int]:
    """Count zeros up to and including the next 1; None if the buffer ends first."""
    start = buffer.cursor
    try:
        while buffer.read_bit() == 0:
            pass
    except BufferExhausted:
        buffer.cursor = start
        return None
    return buffer.cursor - start - 1


def baseline_direct(buffer: BitBuffer) -> Iterator[RoundRecord]:
    """Presence/absence of one qubit per slot: rounds ``0^K 1``."""
    while (k := _read_run(buffer)) is not None:
        yield RoundRecord(bits=k + 1, slots=k + 1, qubits=1, k1=k)


def _sd_transfer(payload: tuple[int, int], rng: np.random.Generator, noise: Optional[NoiseParams],
                 slot: int = 0) -> tuple[int, int]:
    pair = make_epr_pair(slot)
    if noise is not None:
        # one slot in memory on each side between distribution and encoding
        pair = apply_memory_noise(pair, Qubit.A, 1, noise)
        pair = apply_memory_noise(pair, Qubit.B, 1, noise)
    return decode_superdense(bell_measure(encode_superdense(pair, *payload), rng))


def baseline_sdc_tdd(buffer: BitBuffer, rng: np.random.Generator, noise: Optional[NoiseParams] = None,
                     include_presharing: bool = True) -> Iterator[RoundRecord]:
    """Plain superdense coding with on-demand pair distribution.

    Each round spends one slot (and qubit) distributing a pair and one slot
    sending the encoded half. ``include_presharing=False`` drops the
    distribution cost, i.e. assumes an unlimited stock of preshared pairs.
    """
    cost = 2 if include_presharing else 1
    while buffer.has(2):
        payload = tuple(buffer.read(2))
        decoded = _sd_transfer(payload, rng, noise)
        yield RoundRecord(bits=2, slots=cost, qubits=cost, sd_sent=payload, sd_decoded=decoded)


def baseline_ping_pong(buffer: BitBuffer, rng: np.random.Generator) -> Iterator[RoundRecord]:
    """Ping-pong message mode: the receiver sends a travel qubit, the sender
    returns it with one bit phase-encoded. Control rounds are not modelled."""
    while buffer.has(1):
        bit = buffer.read_bit()
        pair = encode_superdense(make_epr_pair(0), bit, 0)
        decoded = decode_superdense(bell_measure(pair, rng))[0]
        yield RoundRecord(bits=1, slots=2, qubits=2, sd_sent=(bit,), sd_decoded=(decoded,))
