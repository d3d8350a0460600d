import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from beamsched.config import ConfigError, DESK
from beamsched.precoding import PrecoderDimensionError
from beamsched.scheduler import (
    METHODS,
    QOS_TOL,
    QoSProfile,
    Scenario,
    ScheduleState,
    SchedulingAbort,
    _allocate,
    admission_test,
    generate_qos,
    greedy_candidate,
    random_schedule,
    run_window,
    schedule_slot,
    search_space_size,
    set_rates,
    sinr_target,
    sort_by_channel_gain,
    sus_schedule,
)
from conftest import random_channel
from oracles import brute_force_best_candidate, sus_reference


def make_scenario(H: np.ndarray, slots, config=DESK, seed: int = 0) -> Scenario:
    """Scenario over a hand-made channel; ``slots`` are the T_k."""
    M, N = H.shape
    cfg = config.replace(num_beams=M, users_per_beam=max(1, math.ceil(N / M)))
    T = np.asarray(slots, dtype=int)
    xi = T * cfg.qos_rate_per_slot_mbps
    target = np.where(T > 0, xi / np.maximum(T, 1), 0.0)
    nu = np.array([sinr_target(x, t, cfg.bandwidth_mhz) for x, t in zip(xi, T)])
    qos = QoSProfile(T, xi.astype(float), target, nu)
    return Scenario(cfg, [], qos, H, np.random.default_rng(seed))


def fresh_state(sc: Scenario, scheduled=()) -> ScheduleState:
    N = sc.H.shape[1]
    avail = {k for k in range(N) if sc.qos.active[k]} - set(scheduled)
    return ScheduleState(0, avail, tuple(scheduled), np.zeros(N), set())


# --- QoS generation -------------------------------------------------------------------


def test_qos_examples():
    assert 13 * DESK.qos_rate_per_slot_mbps == 6500
    cfg = DESK.replace(num_beams=1, users_per_beam=2000)
    q = generate_qos(cfg, np.random.default_rng(0))
    assert q.demand_mb.max() == 6500.0 and q.slots.max() == 13
    zero = q.slots == 0
    assert zero.any()
    assert np.all(q.demand_mb[zero] == 0) and np.all(q.nu[zero] == 0) and not q.active[zero].any()
    assert np.array_equal(q.demand_mb, q.slots * 500.0)


def test_qos_slot_distribution_mean():
    cfg = DESK.replace(num_beams=1, users_per_beam=100_000)
    q = generate_qos(cfg, np.random.default_rng(7))
    assert abs(q.slots.mean() - 6.5) < 0.1
    assert set(np.unique(q.slots)) == set(range(14))


def test_qos_deterministic():
    a = generate_qos(DESK, np.random.default_rng(3))
    b = generate_qos(DESK, np.random.default_rng(3))
    assert np.array_equal(a.slots, b.slots) and np.array_equal(a.nu, b.nu)


def test_sinr_target():
    # 500 Mb over one slot on 500 MHz needs 1 bit/s/Hz
    assert sinr_target(500.0, 1, 500.0) == pytest.approx(1.0)
    assert sinr_target(0.0, 0, 500.0) == 0.0
    assert sinr_target(6.0, 2, 500.0, ignore_bandwidth=True) == pytest.approx(7.0)
    assert sinr_target(1e7, 1, 1.0) == math.inf


# --- ordering and counting ------------------------------------------------------------


def test_sort_examples():
    H = np.zeros((1, 3))
    H[0] = np.sqrt([1.0, 3.0, 2.0])
    assert sort_by_channel_gain(H, [1, 2, 3]) == [2, 3, 1]
    assert sort_by_channel_gain(np.ones((2, 5))) == [0, 1, 2, 3, 4]


def test_sort_matches_reference_sort():
    rng = np.random.default_rng(11)
    H = random_channel(rng, 7, 770)
    H[:, 5] = H[:, 9]  # one exact tie
    g = [float(np.sum(np.abs(H[:, k]) ** 2)) for k in range(770)]
    ref = sorted(range(770), key=lambda k: (-g[k], k))
    assert sort_by_channel_gain(H) == ref


def test_search_space_size():
    assert search_space_size(100, 7) == 17278988695
    assert abs(search_space_size(100, 7) - 1.7e10) / 1.7e10 < 0.02
    assert search_space_size(1, 1) == 1
    assert search_space_size(5, 2) == 15
    big = search_space_size(2000, 1000)
    assert isinstance(big, int) and big > 2**1000
    for bad in ((3, 0), (3, 4)):
        with pytest.raises(ValueError):
            search_space_size(*bad)


# --- greedy candidate and admission ---------------------------------------------------


def test_greedy_single_candidate():
    H = random_channel(np.random.default_rng(0), 3, 1)
    sc = make_scenario(H, [1])
    k, trial, s, rates = greedy_candidate(sc, [], [0])
    assert k == 0 and trial == (0,)
    assert s == pytest.approx(set_rates(sc, [0])[0], rel=1e-12)
    assert greedy_candidate(sc, [], []) is None


def test_greedy_prefers_orthogonal_candidate():
    H = np.zeros((3, 3), dtype=complex)
    H[0, 0] = 1e-5
    H[1, 1] = 1e-5  # orthogonal to user 0
    H[0, 2] = 1e-5  # parallel to user 0
    sc = make_scenario(H, [1, 1, 1])
    assert greedy_candidate(sc, [0], [1, 2])[0] == 1
    assert greedy_candidate(sc, [0], [2, 1])[0] == 1


def test_greedy_matches_brute_force():
    rng = np.random.default_rng(5)
    for _ in range(10):
        H = random_channel(rng, 3, 6)
        sc = make_scenario(H, [3] * 6)
        for size in range(3):
            current = [int(c) for c in rng.choice(6, size=size, replace=False)]
            cands = [k for k in range(6) if k not in current]
            k, trial, s, _ = greedy_candidate(sc, current, cands)
            ref_k, ref_s = brute_force_best_candidate(lambda ids: set_rates(sc, ids), current, cands)
            assert k == ref_k and trial == tuple(current + [k])
            assert s == pytest.approx(ref_s, rel=1e-10)


def test_greedy_rejects_oversized_trial():
    H = random_channel(np.random.default_rng(1), 2, 3)
    sc = make_scenario(H, [1, 1, 1])
    with pytest.raises(PrecoderDimensionError):
        greedy_candidate(sc, [0, 1], [2])


def test_admission_examples():
    H = random_channel(np.random.default_rng(2), 3, 3)
    sc = make_scenario(H, [1, 1, 1])
    q = sc.qos
    ok = np.array([600.0, 600.0])
    low = np.array([600.0, 100.0])  # incumbent dragged below 500 Mbps
    for mode in ("strict", "relax"):
        assert not admission_test((0, 1), ok, 1200.0, 1300.0, q, mode)
    assert admission_test((0, 1), ok, 1200.0, 1000.0, q, "strict")
    assert not admission_test((0, 1), low, 700.0, 600.0, q, "strict")
    assert admission_test((0, 1), low, 700.0, 600.0, q, "relax")
    assert admission_test((0, 1), ok, 1200.0, 1200.0, q, "strict")  # ties are non-decreasing


# --- slot and window ------------------------------------------------------------------


def test_single_user_single_beam_window():
    H = np.full((1, 1), 1e-5 + 0j)
    sc = make_scenario(H, [1], DESK.replace(window_slots=3, qos_slots_range=(0, 3)))
    for method in ("alg1-strict", "alg1-relax", "sus", "random"):
        sc.rng = np.random.default_rng(0)
        _, state = run_window(sc.config, method, scenario=sc)
        first = state.log[0]
        assert first.allocation.scheduled == (0,)
        assert state.satisfied == {0} and state.served[0] >= 500.0
        assert all(not s.allocation.scheduled for s in state.log[1:])


def test_full_carry_over_admits_nobody():
    rng = np.random.default_rng(3)
    H = random_channel(rng, 3, 6)
    sc = make_scenario(H, [5] * 6)
    state = fresh_state(sc, scheduled=(0, 1, 2))
    before = set(state.available)
    ids, alpha = schedule_slot(sc, state, "relax")
    assert ids == (0, 1, 2)
    assert state.available == before
    assert len(set(alpha)) == 1


def test_rejection_consumes_an_inner_index():
    # every candidate lowers the sum rate: the loop runs out without admitting anyone
    H = np.zeros((2, 3), dtype=complex)
    H[0, 0] = 1e-5
    H[0, 1] = 1e-5 * np.exp(0.3j)
    H[0, 2] = 1e-5 * np.exp(0.7j)
    sc = make_scenario(H, [3, 3, 3])
    state = fresh_state(sc, scheduled=(0,))
    ids, alpha = schedule_slot(sc, state, "relax")
    assert ids == (0,)
    assert len(alpha) == 1 + (2 - 1 + 1)


@pytest.mark.parametrize("seed", range(50))
def test_inner_loop_monotone_small_scenarios(small, seed):
    for method in ("alg1-strict", "alg1-relax"):
        _, state = run_window(small, method, seed=seed)
        for s in state.log:
            a = np.asarray(s.alpha_trace)
            assert np.all(np.diff(a) >= -1e-8 * np.maximum(np.abs(a[:-1]), 1.0))


def check_window(sc: Scenario, state: ScheduleState, strict: bool) -> None:
    M = sc.config.num_beams
    served = np.zeros(sc.H.shape[1])
    for s in state.log:
        ids = s.allocation.scheduled
        assert len(ids) <= M and len(set(ids)) == len(ids)
        assert s.sum_throughput == pytest.approx(sum(s.throughput.values()), abs=1e-6)
        for k in ids:
            served[k] += s.throughput[k]
            if strict:
                assert s.throughput[k] >= sc.qos.target_mbps[k] - QOS_TOL
    assert np.allclose(served, state.served, rtol=0, atol=1e-9)
    for k in state.satisfied:
        assert state.served[k] >= sc.qos.demand_mb[k] - QOS_TOL
    sets = [state.available, set(state.scheduled), state.satisfied]
    for i in range(3):
        for j in range(i + 1, 3):
            assert not sets[i] & sets[j]


@pytest.mark.parametrize("method", METHODS)
def test_window_invariants(small, method):
    for seed in range(4):
        sc, state = run_window(small, method, seed=seed)
        check_window(sc, state, strict=method.endswith("strict"))


@pytest.mark.parametrize("method", METHODS)
def test_window_deterministic(small, method):
    a = run_window(small, method, seed=9)[1]
    b = run_window(small, method, seed=9)[1]
    assert np.array_equal(a.served, b.served)
    assert [s.allocation.scheduled for s in a.log] == [s.allocation.scheduled for s in b.log]
    assert [s.allocation.powers.tolist() for s in a.log] == [s.allocation.powers.tolist() for s in b.log]


def test_window_length_and_seeding(small):
    sc, state = run_window(small, "alg1-relax", seed=1)
    assert len(state.log) == small.window_slots
    active = [k for k in range(small.num_users) if sc.qos.active[k]]
    top = sort_by_channel_gain(sc.H[:, active], active)[0]
    assert top in state.log[0].allocation.scheduled


def test_zero_slot_window_is_a_config_error(small):
    with pytest.raises(ConfigError):
        small.replace(window_slots=0)


def test_unknown_method(small):
    with pytest.raises(ValueError):
        run_window(small, "alg3", seed=0)
    with pytest.raises(ValueError):
        run_window(small, "sus", power_mode="max", seed=0)


def test_no_demand_means_empty_slots(small):
    cfg = small.replace(qos_slots_range=(0, 0))
    for method in METHODS:
        _, state = run_window(cfg, method, seed=0)
        assert all(not s.allocation.scheduled for s in state.log)


# --- stage 2 fallback -----------------------------------------------------------------


def test_infeasible_set_is_trimmed_in_relax_and_aborts_in_strict():
    rng = np.random.default_rng(4)
    H = random_channel(rng, 3, 3, scale=1e-6)
    sc = make_scenario(H, [1, 1, 1], DESK.replace(qos_rate_per_slot_mbps=6000.0))
    alloc, g, _, dropped = _allocate(sc, (0, 1, 2), strict=False)
    assert dropped and set(alloc.scheduled) | set(dropped) == {0, 1, 2}
    with pytest.raises(SchedulingAbort):
        _allocate(sc, (0, 1, 2), strict=True)


# --- baselines ------------------------------------------------------------------------


def test_sus_orthogonal_users_by_gain():
    H = np.zeros((3, 5), dtype=complex)
    for k, (row, amp) in enumerate([(0, 1), (1, 5), (2, 3), (0, 4), (1, 2)]):
        H[row, k] = amp * 1e-6
    sc = make_scenario(H, [1] * 5)
    assert sus_schedule(sc, range(5)) == (1, 3, 2)


def test_sus_single_direction():
    v = random_channel(np.random.default_rng(8), 4, 1)[:, 0]
    H = np.outer(v, [1.0, 2.0, 0.5, 3.0])
    sc = make_scenario(H, [1] * 4)
    assert sus_schedule(sc, range(4)) == (3,)


def test_sus_matches_reference():
    rng = np.random.default_rng(12)
    for _ in range(30):
        H = random_channel(rng, 3, 10)
        sc = make_scenario(H, [1] * 10)
        pool = sorted(int(k) for k in rng.choice(10, size=rng.integers(1, 11), replace=False))
        assert sus_schedule(sc, pool) == sus_reference(H, pool, 3, DESK.sus_alpha)


@given(st.integers(0, 2**32 - 1), st.floats(0.05, 1.0))
def test_sus_threshold_property(seed, alpha):
    rng = np.random.default_rng(seed)
    H = random_channel(rng, 4, 9)
    sc = make_scenario(H, [1] * 9, DESK.replace(sus_alpha=alpha))
    ids = sus_schedule(sc, range(9))
    assert 1 <= len(ids) <= 4 and len(set(ids)) == len(ids)
    assert ids == sus_reference(H, list(range(9)), 4, alpha)


def test_random_schedule_all_when_pool_small():
    H = random_channel(np.random.default_rng(0), 3, 3)
    sc = make_scenario(H, [1] * 3)
    assert random_schedule(sc, [2, 0, 1]) == (0, 1, 2)
    assert random_schedule(sc, [1]) == (1,)


def test_random_schedule_uniform():
    N, M, n = 20, 7, 10_000
    H = random_channel(np.random.default_rng(0), M, N)
    sc = make_scenario(H, [1] * N, seed=21)
    counts = np.zeros(N)
    for _ in range(n):
        ids = random_schedule(sc, range(N))
        assert len(set(ids)) == M
        counts[list(ids)] += 1
    p = M / N
    sigma = math.sqrt(p * (1 - p) / n)
    assert np.all(np.abs(counts / n - p) <= 3 * sigma)


def test_random_schedule_reproducible():
    H = random_channel(np.random.default_rng(0), 3, 9)
    a = make_scenario(H, [1] * 9, seed=5)
    b = make_scenario(H, [1] * 9, seed=5)
    assert [random_schedule(a, range(9)) for _ in range(20)] == [random_schedule(b, range(9)) for _ in range(20)]
