"""Shared test utilities: a back-to-back sender/receiver driver, exact
round oracles and the acceptance result recorder."""
from contextlib import contextmanager
from fractions import Fraction
from typing import NamedTuple

import numpy as np

from qtwp.protocol import (
    ActionKind,
    BitBuffer,
    BufferExhausted,
    ReceiverState,
    SenderPhase,
    SenderState,
    receiver_step,
    sender_step,
)


class Drive(NamedTuple):
    output: list
    consumed: list
    wire: str
    rounds: list  # (first_slot, second_slot, action) per closed round
    sender: SenderState


def drive(bits, mode, rng=None) -> Drive:
    if isinstance(bits, str):
        bits = [int(ch) for ch in bits]
    rng = rng if rng is not None else np.random.default_rng(0)
    buf = BitBuffer(bits)
    snd, rcv = SenderState(), ReceiverState()
    out, wire, rounds = [], [], []
    slot = first = 0
    while True:
        try:
            action, snd = sender_step(snd, buf, mode, slot)
        except BufferExhausted:
            break
        wire.append("1" if action.transmits else "0")
        if action.kind is ActionKind.FIRST:
            first = slot
        got, rcv, closed = receiver_step(rcv, action.pair, mode, rng)
        out.extend(got)
        if closed:
            rounds.append((first, slot, action))
        slot += 1
    return Drive(out, buf.consumed, "".join(wire), rounds, snd)


def check_decodable(bits, mode) -> Drive:
    """Receiver output equals what the sender consumed, up to an unfinished
    round whose pending zeros the receiver cannot emit yet."""
    d = drive(bits, mode)
    n = len(d.output)
    assert d.output == d.consumed[:n]
    tail = d.consumed[n:]
    if d.sender.phase is SenderPhase.S0:
        assert tail == []
    else:
        assert tail == [0] * d.sender.zeros_sent
    return d


def brute_force_round(coherence, k1_max=80):
    """Exact E[B] and E[T] by summing the joint law of the two zero runs."""
    m = coherence - 2
    gap = [Fraction(1, 2 ** (i + 1)) for i in range(m)] + [Fraction(1, 2 ** m)]
    eb = et = Fraction(0)
    for k1 in range(k1_max):
        p1 = Fraction(1, 2 ** (k1 + 1))
        for k2, p2 in enumerate(gap):
            stuffed = k2 == m
            eb += p1 * p2 * (k1 + k2 + (3 if stuffed else 4))
            et += p1 * p2 * (k1 + k2 + 2)
    return float(eb), float(et)


# acceptance results, printed in the terminal summary by conftest
ACCEPTANCE_LINES = []


@contextmanager
def criterion(number, title):
    detail = {}
    try:
        yield detail
    except BaseException:
        _record(number, title, "FAIL", detail)
        raise
    _record(number, title, "PASS", detail)


def _record(number, title, verdict, detail):
    extra = ", ".join(f"{k}={v}" for k, v in detail.items())
    line = f"criterion {number:>2} {verdict}: {title}" + (f" ({extra})" if extra else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
