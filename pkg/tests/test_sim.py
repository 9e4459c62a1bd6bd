"""BTB simulator: decomposition, replacement behavior, replay accounting."""

import random
from collections import Counter

import pytest

from btbrecon import (
    Access,
    BtbGeometry,
    BtbState,
    MeasurementRecord,
    NoiseModel,
    Replacement,
    branch_addresses,
    decompose,
    entry_key,
    inject_noise,
    recompose,
    replay,
)

G_A72 = BtbGeometry.from_sets(2048, 2, 4)  # 2048 sets x 2 ways, index bits 4..14


# ---------------------------------------------------------------------------
# geometry and address decomposition
# ---------------------------------------------------------------------------

def test_geometry_derived_quantities():
    assert G_A72.index_hi == 14
    assert G_A72.sets == 2048
    assert G_A72.capacity == 4096


def test_geometry_validation():
    with pytest.raises(ValueError):
        BtbGeometry(ways=0, index_lo=4, index_hi=14)
    with pytest.raises(ValueError):
        BtbGeometry(ways=2, index_lo=10, index_hi=4)
    with pytest.raises(ValueError):
        BtbGeometry(ways=2, index_lo=4, index_hi=50)
    with pytest.raises(ValueError):
        BtbGeometry.from_sets(1000, 2, 4)


def test_decompose_zero_pc():
    d = decompose(G_A72, 0x0)
    assert (d.index, d.tag, d.unused_low) == (0, 0, 0)


def test_decompose_known_pc():
    # (0x400004 >> 4) & 0x7FF = 0, 0x400004 >> 15 = 0x80
    d = decompose(G_A72, 0x400004)
    assert d.index == 0x000
    assert d.tag == 0x80
    assert d.unused_low == 0x4


def test_decompose_single_index_increment():
    d = decompose(G_A72, 0x10)
    assert (d.index, d.tag) == (1, 0)


def test_decompose_recompose_roundtrip():
    rng = random.Random(42)
    for _ in range(10_000):
        g = BtbGeometry(ways=rng.randint(1, 8),
                        index_lo=(lo := rng.randint(0, 10)),
                        index_hi=lo + rng.randint(0, 12))
        pc = rng.randrange(0, 1 << 48)
        assert recompose(g, decompose(g, pc)) == pc & ((1 << (g.tag_hi + 1)) - 1)


def test_truncated_tag_aliases_high_bits():
    g = BtbGeometry(ways=2, index_lo=4, index_hi=7, tag_hi=15)
    assert entry_key(g, 0x10004) == entry_key(g, 0x4)  # bit 16 dropped
    assert entry_key(g, 0x8004) != entry_key(g, 0x4)   # bit 15 kept


# ---------------------------------------------------------------------------
# access semantics
# ---------------------------------------------------------------------------

def test_fresh_state_always_misses():
    state = BtbState(G_A72)
    assert state.access(0x40000004) is Access.MISS


def test_immediate_reaccess_hits():
    state = BtbState(G_A72)
    state.access(0x40000004)
    assert state.access(0x40000004) is Access.HIT


def test_two_way_lru_cyclic_thrash():
    # A,B,C share one set with distinct tags; 2-way LRU misses forever.
    g = BtbGeometry(ways=2, index_lo=4, index_hi=5)
    a, b, c = 0x0, 0x40, 0x80  # same index (bits 4..5 = 0), different tags
    assert all(decompose(g, pc).index == 0 for pc in (a, b, c))
    state = BtbState(g)
    results = [state.access(pc) for _ in range(4) for pc in (a, b, c)]
    assert all(r is Access.MISS for r in results)


def test_occupancy_bound_and_counters():
    rng = random.Random(7)
    g = BtbGeometry(ways=3, index_lo=2, index_hi=5)
    state = BtbState(g)
    for _ in range(5000):
        state.access(rng.randrange(0, 1 << 16))
    assert all(len(s) <= g.ways for s in state.sets)
    assert state.access_counter == 5000
    assert 0 <= state.miss_counter <= 5000


class RecencyListBtb:
    """Reference model: per-set list ordered least-recent first."""

    def __init__(self, geometry):
        self.g = geometry
        self.sets = [[] for _ in range(geometry.sets)]

    def access(self, pc):
        d = decompose(self.g, pc)
        key = entry_key(self.g, pc)
        entries = self.sets[d.index]
        if key in entries:
            if self.g.replacement is Replacement.LRU:
                entries.remove(key)
                entries.append(key)
            return Access.HIT
        if len(entries) == self.g.ways:
            entries.pop(0)
        entries.append(key)
        return Access.MISS


@pytest.mark.parametrize("policy", [Replacement.LRU, Replacement.FIFO])
def test_state_matches_recency_list_reference(policy):
    rng = random.Random(99)
    for trial in range(20):
        lo = rng.randint(0, 5)
        g = BtbGeometry(ways=rng.randint(1, 6), index_lo=lo,
                        index_hi=lo + rng.randint(0, 5), replacement=policy,
                        tag_hi=rng.choice([47, lo + 14]))
        state = BtbState(g)
        ref = RecencyListBtb(g)
        pool = [rng.randrange(0, 1 << 20) for _ in range(rng.randint(4, 200))]
        for _ in range(2000):
            pc = rng.choice(pool)
            assert state.access(pc) is ref.access(pc)
        for idx in range(g.sets):
            assert list(state.sets[idx]) == ref.sets[idx]


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------

def test_replay_single_branch_fits():
    rec = replay(G_A72, branch_addresses(1, 8), warmup_rounds=10, measure_rounds=1, stride=8)
    assert rec.miss_rate == 0.0
    assert rec.mispredictions == 0


def test_replay_at_capacity_no_misses():
    rec = replay(G_A72, branch_addresses(4096, 16), warmup_rounds=10, stride=16)
    assert rec.miss_rate == 0.0


def test_replay_overload_thrashes_partially():
    # 5120 branches over 2048 sets: 1024 sets hold 3 and thrash under LRU.
    rec = replay(G_A72, branch_addresses(5120, 16), warmup_rounds=10, stride=16)
    assert rec.mispredictions == 3072
    assert rec.miss_rate == 3072 / 5120 == 0.6


def test_replay_empty_trace_rejected():
    with pytest.raises(ValueError, match="empty gadget"):
        replay(G_A72, [])


def test_replay_parameter_validation():
    with pytest.raises(ValueError):
        replay(G_A72, [4], warmup_rounds=-1)
    with pytest.raises(ValueError):
        replay(G_A72, [4], measure_rounds=0)


def test_replay_deterministic_all_policies():
    trace = branch_addresses(300, 32)
    for policy in Replacement:
        g = BtbGeometry(ways=2, index_lo=4, index_hi=8, replacement=policy, seed=11)
        a = replay(g, trace, warmup_rounds=2, measure_rounds=3, stride=32)
        b = replay(g, trace, warmup_rounds=2, measure_rounds=3, stride=32)
        assert a == b


def test_analytic_overload_oracle():
    # Cyclic distinct-PC trace under LRU with warmup >= 1:
    # rate == (branches in sets with load > ways) / B, exactly.
    rng = random.Random(1234)
    for _ in range(60):
        k = rng.randint(1, 9)
        lo = rng.randint(0, 8)
        g = BtbGeometry(ways=rng.randint(1, 8), index_lo=lo, index_hi=lo + k - 1)
        b = rng.randint(1, 600)
        n = 1 << rng.randint(3, 16)
        trace = branch_addresses(b, n, rng.randrange(0, 1 << 18) << 21)
        rec = replay(g, trace, warmup_rounds=rng.randint(1, 3), stride=n)
        loads = Counter(decompose(g, pc).index for pc in trace)
        assert rec.miss_rate == sum(c for c in loads.values() if c > g.ways) / b


# ---------------------------------------------------------------------------
# noise injection
# ---------------------------------------------------------------------------

def test_noise_off_is_identity():
    rec = replay(G_A72, branch_addresses(64, 16), stride=16)
    assert inject_noise(rec, None) is rec
    assert inject_noise(rec, NoiseModel(lam=0.0, seed=3)) is rec


def test_noise_negative_rate_rejected():
    with pytest.raises(ValueError):
        NoiseModel(lam=-0.5)


def test_noise_pushes_rate_above_one():
    # frozen draw: Poisson(0.01 * 1000) with seed stream [7, 1000, 64] -> 10
    rec = MeasurementRecord(branch_count=1000, stride=64, mispredictions=1000, miss_rate=1.0)
    noisy = inject_noise(rec, NoiseModel(lam=0.01, seed=7))
    assert noisy.mispredictions == 1010
    assert noisy.miss_rate == 1.01
    assert noisy.rate_above_one


def test_noise_deterministic_per_seed_and_cell():
    rec = replay(G_A72, branch_addresses(500, 16), stride=16)
    a = inject_noise(rec, NoiseModel(lam=0.05, seed=3))
    b = inject_noise(rec, NoiseModel(lam=0.05, seed=3))
    c = inject_noise(rec, NoiseModel(lam=0.05, seed=4))
    assert a == b
    assert a != c or a.mispredictions == c.mispredictions
