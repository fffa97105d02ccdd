"""End-to-end acceptance checks, one test per criterion.

Each test prints a ``criterion N PASS|FAIL`` line; the lines are repeated
in the pytest terminal summary.
"""
import itertools
import json
import math
import time

import numpy as np
import pytest

from helpers import brute_force_round, check_decodable, criterion, drive
from qtwp.analytics import (
    batch_stats,
    block_rate_standard_error,
    empirical_metrics,
    expected_sd_error_rate,
    sd_error_moments,
    theory_decoherence,
    theory_delay,
)
from qtwp.cli import main
from qtwp.protocol import ProtocolMode
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
from qtwp.sim_engine import SimConfig, run_many, run_simulation


def _metrics(**cfg):
    return empirical_metrics(run_simulation(SimConfig(**cfg)))


def test_criterion_01_ideal_asymptotics():
    with criterion(1, "ideal protocol over 1e6 slots gives R~1.5, E~3 in under 10 s") as info:
        start = time.perf_counter()
        m = _metrics(mode="quantum_ideal", slots=10**6, seed=2024)
        elapsed = time.perf_counter() - start
        info.update(R=f"{m.rate:.5f}", E=f"{m.efficiency:.5f}", seconds=f"{elapsed:.2f}")
        assert 1.48 <= m.rate <= 1.52
        assert 2.95 <= m.efficiency <= 3.05
        assert elapsed < 10


def test_criterion_02_baselines():
    with criterion(2, "baseline schemes over 1e6 slots") as info:
        direct = _metrics(mode="direct", slots=10**6, seed=1)
        sdc = _metrics(mode="sdc_tdd", slots=10**6, seed=2)
        pp = _metrics(mode="ping_pong", slots=10**6, seed=3)
        info.update(direct=f"({direct.rate:.4f},{direct.efficiency:.4f})",
                    sdc_tdd=f"({sdc.rate:.4f},{sdc.efficiency:.4f})",
                    ping_pong=f"({pp.rate},{pp.efficiency})")
        assert abs(direct.rate - 1) <= 0.02 and abs(direct.efficiency - 2) <= 0.02
        assert abs(sdc.rate - 1) <= 0.02 and abs(sdc.efficiency - 1) <= 0.02
        assert pp.rate == 0.5 and pp.efficiency == 0.5


def test_criterion_03_decoherence_theory():
    with criterion(3, "variant mean (R, E) within 3 SE of closed form for c = 2..12") as info:
        eb, et = brute_force_round(2)
        assert eb / et == pytest.approx(4 / 3, abs=1e-12)
        assert eb / 2 == pytest.approx(2, abs=1e-12)
        assert theory_decoherence(2).rate == pytest.approx(eb / et, abs=1e-12)
        worst = 0.0
        for c in range(2, 13):
            configs = [SimConfig(mode="quantum_variant", coherence=c, slots=1000, seed=1000 * c + i)
                       for i in range(100)]
            ms = [empirical_metrics(t) for t in run_many(configs)]
            th = theory_decoherence(c)
            for values, target in (([m.rate for m in ms], th.rate), ([m.efficiency for m in ms], th.efficiency)):
                s = batch_stats(values)
                z = abs(s.mean - target) / s.standard_error
                worst = max(worst, z)
                assert z <= 3, f"c={c}: mean {s.mean} vs {target} ({z:.2f} SE)"
        info["max_z"] = f"{worst:.2f}"


def _delay_run(delta, n, seed):
    trace = run_simulation(SimConfig(delta=delta, rounds_per_swap=n, slots=None, rounds=10**5, seed=seed))
    return block_rate_standard_error(trace)


def _z(diff, se):
    if se == 0:
        return 0.0 if abs(diff) <= 1e-12 else math.inf
    return abs(diff) / se


def test_criterion_04_delay_model():
    with criterion(4, "delay model and (delta, N) <-> (delta/N, 1) equivalence, 1e5 rounds") as info:
        results = {}
        worst = 0.0
        for i, (delta, n) in enumerate(itertools.product((0, 0.5, 1, 2), (1, 4))):
            r, se = _delay_run(delta, n, seed=400 + i)
            results[delta, n] = (r, se)
            # delta = 2, N = 1 makes every block's rate exactly 1, so se = 0
            z = _z(r - theory_delay(delta, None, n), se)
            worst = max(worst, z)
            assert z <= 3, f"delta={delta} N={n}: R={r} ({z:.2f} SE)"
        for j, delta in enumerate((0.5, 1, 2)):
            r4, se4 = results[delta, 4]
            r1, se1 = results.get((delta / 4, 1)) or _delay_run(delta / 4, 1, seed=500 + j)
            z = _z(r4 - r1, math.hypot(se4, se1))
            worst = max(worst, z)
            assert z <= 3, f"delta={delta}: N=4 gives {r4}, N=1 at delta/4 gives {r1}"
        info["max_z"] = f"{worst:.2f}"


def test_criterion_05_unique_decodability():
    with criterion(5, "receiver output equals consumed input, 1000 buffers x m = 0..8") as info:
        for example, stuffed in (("00011" + "10", False), ("001001" + "0", True), ("010001", True)):
            d = check_decodable(example, ProtocolMode(2))
            assert [a.stuffed for _, _, a in d.rounds] == [stuffed]
        rng = np.random.default_rng(55)
        checked = 0
        for _ in range(1000):
            bits = rng.integers(0, 2, int(rng.integers(0, 1001))).tolist()
            for m in range(9):
                check_decodable(bits, ProtocolMode(m))
                checked += 1
        info["cases"] = checked


def test_criterion_06_coherence_bound():
    with criterion(6, "pair age <= c for every input prefix of length <= 12") as info:
        worst = {}
        for c in range(2, 11):
            mode = ProtocolMode.with_coherence(c)
            oldest = 0
            for length in range(13):
                for bits in itertools.product((0, 1), repeat=length):
                    for first, second, _ in drive(bits, mode).rounds:
                        oldest = max(oldest, second - first + 1)
            worst[c] = oldest
            assert oldest <= c
        info["max_age_by_c"] = worst


def test_criterion_07_quantum_core():
    with criterion(7, "CPTP invariants, fidelity closed form, noiseless round trip") as info:
        rng = np.random.default_rng(77)
        for _ in range(2000):
            g = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
            rho = g @ g.conj().T
            pair = PairState(rho / np.trace(rho).real)
            t1 = rng.uniform(0.5, 100)
            params = NoiseParams(t1, rng.uniform(0.01, 1) * 2 * t1)
            for _ in range(3):
                pair = apply_memory_noise(pair, Qubit(int(rng.integers(2))), int(rng.integers(0, 50)), params)
            assert abs(np.trace(pair.rho) - 1) <= 1e-12
            assert np.linalg.eigvalsh(pair.rho).min() >= -1e-10
        worst = 0.0
        for t1, t2 in ((20, 18), (5, 10), (100, 3)):
            for t in range(0, 200, 7):
                for qubit in Qubit:
                    f = apply_memory_noise(make_epr_pair(0), qubit, t, NoiseParams(t1, t2)).fidelity()
                    worst = max(worst, abs(f - (0.25 + math.exp(-t / t1) / 4 + math.exp(-t / t2) / 2)))
        assert worst <= 1e-12
        for payload in ((0, 0), (0, 1), (1, 0), (1, 1)):
            pair = encode_superdense(make_epr_pair(0), *payload)
            for _ in range(100):
                assert decode_superdense(bell_measure(pair, rng)) == payload
        assert decode_superdense(BellOutcome.PSI_MINUS) == (1, 1)
        info["fidelity_err"] = f"{worst:.1e}"


def test_criterion_08_error_rate_anchor():
    with criterion(8, "c = 2 SD error rate matches one-slot oracle and stand-alone SD coding") as info:
        noise = NoiseParams(20, 18)
        mean, var = sd_error_moments(1, noise)
        oracle = mean / 2
        assert expected_sd_error_rate(noise, coherence=2) == pytest.approx(oracle, abs=1e-15)

        def measured(**cfg):
            m = _metrics(noise="t1t2", t1=20, t2=18, slots=40_000, **cfg)
            rounds = m.n_sd_bits // 2
            return m.sd_error_rate, math.sqrt(var / rounds) / 2, m.n_sd_bits

        proto, se_p, n_p = measured(mode="quantum_variant", coherence=2, seed=81)
        alone, se_a, n_a = measured(mode="sdc_tdd", seed=82)
        info.update(oracle=f"{oracle:.5f}", protocol=f"{proto:.5f}", standalone=f"{alone:.5f}",
                    sd_bits=n_p)
        assert n_p >= 10**4 and n_a >= 10**4
        assert abs(proto - oracle) <= 3 * se_p
        assert abs(alone - oracle) <= 3 * se_a
        assert abs(proto - alone) <= 3 * math.hypot(se_p, se_a)


def _batch_views(cfg):
    trace = run_simulation(cfg)
    return empirical_metrics(trace, upto_slot=100), empirical_metrics(trace)


def test_criterion_09_batch_statistics():
    with criterion(9, "1000 runs: 1000-slot IQR of R below 100-slot IQR, all R, E > 1") as info:
        results = run_many([SimConfig(slots=1000, seed=9000 + i) for i in range(1000)], _batch_views)
        short = batch_stats(r[0].rate for r in results)
        full = batch_stats(r[1].rate for r in results)
        info.update(iqr_100=f"{short.iqr:.4f}", iqr_1000=f"{full.iqr:.4f}")
        assert full.iqr < short.iqr
        for view in results:
            for m in view:
                assert m.rate > 1 and m.efficiency > 1


REPLAY_COMMANDS = [
    (["run", "--mode", "quantum-variant", "--c", "4", "--t1", "20", "--t2", "18", "--slots", "2000",
      "--delta", "0.5", "--rounds-per-swap", "4", "--seed", "10"], ["trace.csv", "summary.json"]),
    (["batch", "--runs", "20", "--slots", "500", "--seed", "10"], ["batch.csv", "batch.json"]),
    (["sweep", "--c-range", "2:4", "--runs-per-c", "5", "--slots", "500", "--seed", "10"], ["sweep.csv"]),
    (["theory", "--c-range", "2:12", "--delta", "1", "--n", "4"], ["theory.csv"]),
]


def test_criterion_10_determinism(tmp_path):
    with criterion(10, "every command replays bit-exactly from its echoed config") as info:
        for argv, suffixes in REPLAY_COMMANDS:
            name = argv[0]
            assert main([*argv, "--out-prefix", str(tmp_path / f"{name}_a")]) == 0
            assert main([*argv, "--out-prefix", str(tmp_path / f"{name}_b")]) == 0
            head = (tmp_path / f"{name}_a.{suffixes[0]}").read_text()
            echo = json.loads(head) if suffixes[0].endswith(".json") else json.loads(head.splitlines()[0][9:])
            replay = (echo["config"] if "argv" not in echo else echo)["argv"]
            assert main([*replay, "--out-prefix", str(tmp_path / f"{name}_c")]) == 0
            for suffix in suffixes:
                a = (tmp_path / f"{name}_a.{suffix}").read_bytes()
                assert a == (tmp_path / f"{name}_b.{suffix}").read_bytes()
                assert a == (tmp_path / f"{name}_c.{suffix}").read_bytes()
        info["commands"] = len(REPLAY_COMMANDS)
