"""Two-qubit density-matrix primitives: EPR pairs, superdense encoding,
Bell measurement and T1/T2 memory noise.

Basis ordering is |q_A q_B>, so qubit A is the high bit of the 4-dim index.
Qubit A is the one the sender keeps (and later encodes and sends); qubit B is
the one transmitted first.
"""
from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field

import numpy as np

TRACE_TOL = 1e-12
PSD_TOL = 1e-10


class BellOutcome(enum.IntEnum):
    """Bell-measurement result. The integer value is ``2*b0 + b1`` of the
    payload that maps |Phi+> onto this state."""

    PHI_PLUS = 0
    PSI_PLUS = 1
    PHI_MINUS = 2
    PSI_MINUS = 3


class Qubit(enum.IntEnum):
    A = 0
    B = 1


_S = 1 / math.sqrt(2)
# columns are |Phi+>, |Psi+>, |Phi->, |Psi-> in BellOutcome order
BELL_BASIS = np.array(
    [
        [_S, 0, _S, 0],
        [0, _S, 0, _S],
        [0, _S, 0, -_S],
        [_S, 0, -_S, 0],
    ],
    dtype=complex,
)
# p_i = sum_jk conj(B_ji) rho_jk B_ki, as one matrix acting on vec(rho)
_BELL_PROJ = np.einsum("ji,ki->ijk", BELL_BASIS.conj(), BELL_BASIS).reshape(4, 16)

_I2 = np.eye(2, dtype=complex)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Z = np.array([[1, 0], [0, -1]], dtype=complex)

# Z^b0 X^b1 on qubit A, indexed by 2*b0 + b1
ENCODERS = tuple(
    np.kron(np.linalg.matrix_power(_Z, b0) @ np.linalg.matrix_power(_X, b1), _I2)
    for b0 in (0, 1)
    for b1 in (0, 1)
)


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


PHI_PLUS = _frozen(np.outer(BELL_BASIS[:, 0], BELL_BASIS[:, 0].conj()))


@dataclass(frozen=True)
class NoiseParams:
    """Relaxation (``t1``) and dephasing (``t2``) times, in slots."""

    t1: float = math.inf
    t2: float = math.inf

    def __post_init__(self):
        if not self.t1 > 0:
            raise ValueError(f"t1 must be positive, got {self.t1}")
        if not self.t2 > 0:
            raise ValueError(f"t2 must be positive, got {self.t2}")
        # complete positivity of the T1/T2 map
        if self.t2 > 2 * self.t1:
            raise ValueError(f"t2 must not exceed 2*t1 (t1={self.t1}, t2={self.t2})")

    @property
    def is_noiseless(self) -> bool:
        return math.isinf(self.t1) and math.isinf(self.t2)

    def factors(self, slots: float) -> tuple[float, float]:
        """Return (population decay, coherence decay) after ``slots``."""
        return math.exp(-slots / self.t1), math.exp(-slots / self.t2)


@dataclass(frozen=True)
class CoherenceBudget:
    """Maximum lifetime of a usable pair, in slots."""

    slots: int

    def __post_init__(self):
        if int(self.slots) != self.slots or self.slots < 2:
            raise ValueError(f"coherence budget must be an integer >= 2, got {self.slots}")

    @property
    def stuff_after(self) -> int:
        # zeros allowed between the two transmissions
        return self.slots - 2


@dataclass(frozen=True, eq=False)
class PairState:
    rho: np.ndarray
    generated_at: int = 0
    noise_accrued: tuple[int, int] = field(default=(0, 0))

    def fidelity(self, outcome: BellOutcome = BellOutcome.PHI_PLUS) -> float:
        v = BELL_BASIS[:, outcome]
        return float(np.real(v.conj() @ self.rho @ v))

    def check(self) -> None:
        """Raise ``ValueError`` unless rho is a valid density matrix."""
        rho = self.rho
        if rho.shape != (4, 4):
            raise ValueError(f"rho must be 4x4, got {rho.shape}")
        tr = np.trace(rho)
        if abs(tr - 1) > TRACE_TOL:
            raise ValueError(f"trace(rho) = {tr}")
        if not np.allclose(rho, rho.conj().T, rtol=0, atol=TRACE_TOL):
            raise ValueError("rho is not Hermitian")
        if np.linalg.eigvalsh(rho).min() < -PSD_TOL:
            raise ValueError("rho is not positive semidefinite")


def make_epr_pair(slot: int) -> PairState:
    return PairState(PHI_PLUS, generated_at=slot)


# rho -> U rho U^dagger as a 16x16 map on row-major vec(rho)
_ENCODER_SUPEROPS = tuple(_frozen(np.kron(u, u.conj())) for u in ENCODERS)


# a fresh pair always shares PHI_PLUS, so its four encodings are fixed
_ENCODED_PHI_PLUS = tuple(_frozen((op @ PHI_PLUS.ravel()).reshape(4, 4)) for op in _ENCODER_SUPEROPS)


def encode_superdense(pair: PairState, b0: int, b1: int) -> PairState:
    if pair.rho is PHI_PLUS:
        rho = _ENCODED_PHI_PLUS[2 * b0 + b1]
    else:
        rho = _frozen((_ENCODER_SUPEROPS[2 * b0 + b1] @ pair.rho.ravel()).reshape(4, 4))
    return PairState(rho, pair.generated_at, pair.noise_accrued)


def _damp_first(r: np.ndarray, decay: float, coherence: float) -> np.ndarray:
    # r has shape (2, 2, 2, 2) = [a, b, a', b'] with the damped qubit on a/a'
    out = np.empty_like(r)
    out[1, :, 1, :] = decay * r[1, :, 1, :]
    out[0, :, 0, :] = r[0, :, 0, :] + (1 - decay) * r[1, :, 1, :]
    out[0, :, 1, :] = coherence * r[0, :, 1, :]
    out[1, :, 0, :] = coherence * r[1, :, 0, :]
    return out


def _damp(rho: np.ndarray, qubit: Qubit, decay: float, coherence: float) -> np.ndarray:
    r = rho.reshape(2, 2, 2, 2)
    if qubit is Qubit.A:
        r = _damp_first(r, decay, coherence)
    else:
        r = _damp_first(r.transpose(1, 0, 3, 2), decay, coherence).transpose(1, 0, 3, 2)
    return r.reshape(4, 4)


@functools.lru_cache(maxsize=1024)
def _noise_superop(qubit: Qubit, slots: int, params: NoiseParams) -> np.ndarray:
    decay, coherence = params.factors(slots)
    basis = np.eye(16).reshape(16, 4, 4)
    cols = [_damp(e, qubit, decay, coherence).ravel() for e in basis]
    return _frozen(np.array(cols).T)


def apply_memory_noise(pair: PairState, qubit: Qubit, slots: int, params: NoiseParams) -> PairState:
    """Store one qubit of ``pair`` for ``slots`` slots under T1/T2 noise.

    Excited population of that qubit decays by exp(-t/T1) into its ground
    state; its coherences decay by exp(-t/T2).
    """
    if slots < 0:
        raise ValueError(f"slots must be non-negative, got {slots}")
    qubit = Qubit(qubit)
    accrued = list(pair.noise_accrued)
    accrued[qubit] += slots
    if slots == 0 or params.is_noiseless:
        return PairState(pair.rho, pair.generated_at, tuple(accrued))
    rho = (_noise_superop(qubit, slots, params) @ pair.rho.ravel()).reshape(4, 4)
    return PairState(_frozen(rho), pair.generated_at, tuple(accrued))


def bell_probabilities(pair: PairState) -> np.ndarray:
    p = np.real(_BELL_PROJ @ pair.rho.ravel())
    return np.clip(p, 0.0, None)


_OUTCOMES = tuple(BellOutcome)


def _sample(probs: list[float], u: float) -> BellOutcome:
    u *= sum(probs)
    acc = 0.0
    for i in range(3):
        acc += probs[i]
        if u < acc:
            return _OUTCOMES[i]
    return BellOutcome.PSI_MINUS


# Bell probabilities of the shared noiseless states, keyed by array identity
_KNOWN_PROBS = {id(rho): (_BELL_PROJ @ rho.ravel()).real.tolist() for rho in (PHI_PLUS, *_ENCODED_PHI_PLUS)}


def bell_measure(pair: PairState, rng: np.random.Generator) -> BellOutcome:
    """Sample a Bell outcome. Draws exactly one uniform from ``rng``."""
    probs = _KNOWN_PROBS.get(id(pair.rho))
    if probs is None:
        probs = (_BELL_PROJ @ pair.rho.ravel()).real.tolist()
    return _sample(probs, rng.random())


def decode_superdense(outcome: BellOutcome) -> tuple[int, int]:
    v = int(outcome)
    return v >> 1, v & 1


def pair_age(pair: PairState, measure_slot: int) -> int:
    # sending at t and measuring at t+1 is age 2
    return measure_slot - pair.generated_at + 1


def fixed_coherence_measure(
    pair: PairState, measure_slot: int, budget: CoherenceBudget, rng: np.random.Generator
) -> BellOutcome:
    """Bell measurement under a sudden-death coherence model: exact while the
    pair's age is within ``budget``, uniformly random afterwards."""
    if pair_age(pair, measure_slot) > budget.slots:
        return _OUTCOMES[min(int(rng.random() * 4), 3)]
    return bell_measure(pair, rng)
