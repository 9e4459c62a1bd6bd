"""Inference operations on hand-built and simulator-derived matrices."""

import random

import pytest

from btbrecon import (
    BtbGeometry,
    Indeterminate,
    InferenceConfig,
    MissMatrix,
    SimulatorBackend,
    SweepGrid,
    cross_check,
    hypothesis_grids,
    infer_all,
    infer_capacity,
    infer_index_hi,
    infer_index_lo,
    infer_ways,
    preset_grid,
    run_sweep,
    sweep_simulator,
)

G_A72 = BtbGeometry.from_sets(2048, 2, 4)


def matrix_of(rows, cols, table, metadata=None):
    """Build a matrix from a dense nested list (None = missing)."""
    cells = {}
    for i, b in enumerate(rows):
        for j, n in enumerate(cols):
            if table[i][j] is not None:
                cells[(b, n)] = table[i][j]
    meta = {"warmup_rounds": 10, "measure_rounds": 1}
    meta.update(metadata or {})
    return MissMatrix(tuple(rows), tuple(cols), cells, {}, meta)


def hardware_capacity_matrix():
    """Hardware-flavored capacity sweep: simulator pattern for 2048x2 with
    the reported straddle values 0.17 / 0.48 and one rate above 1.0."""
    m = run_sweep(SimulatorBackend(G_A72), preset_grid("capacity"))
    m.cells[(4096, 16)] = 0.17
    m.cells[(5120, 16)] = 0.48
    m.cells[(8192, 8)] = 1.013  # interrupt noise pushes hardware rates past 1
    return m


# ---------------------------------------------------------------------------
# index_lo
# ---------------------------------------------------------------------------

def test_index_lo_hardware_shape():
    lo, ev = infer_index_lo(hardware_capacity_matrix())
    assert lo == 4
    assert ev.details["one_based"] == 5
    assert len(ev.cells) >= 2


def test_index_lo_simulated_lo6():
    g = BtbGeometry.from_sets(1024, 2, 6)
    m = sweep_simulator(g, hypothesis_grids(g))
    lo, ev = infer_index_lo(m)
    assert lo == 6  # jump appears between N=64 and N=128
    assert {c[1] for c in ev.cells} == {64, 128}


def test_index_lo_flat_matrix_indeterminate():
    flat = matrix_of([1024, 2048], [8, 16, 32], [[0.0] * 3, [0.0] * 3])
    with pytest.raises(Indeterminate, match="no index-lo signature"):
        infer_index_lo(flat)


# ---------------------------------------------------------------------------
# capacity
# ---------------------------------------------------------------------------

def test_capacity_hardware_straddle():
    m = hardware_capacity_matrix()
    est, ev = infer_capacity(m, 4)
    assert est.rounded == 4096 and est.raw == 4096
    assert est.flag is None
    straddle = {(b, r) for b, n, r in ev.cells if b in (4096, 5120)}
    assert (4096, 0.17) in straddle and (5120, 0.48) in straddle


def test_capacity_simulated_1024x2():
    g = BtbGeometry.from_sets(1024, 2, 4)
    grid = SweepGrid(tuple(range(512, 4097, 512)), (16,), warmup_rounds=1)
    m = run_sweep(SimulatorBackend(g), grid)
    assert m.rate(2048, 16) == 0.0
    assert m.rate(2560, 16) > 0.25
    est, _ = infer_capacity(m, 4)
    assert est.rounded == 2048


def test_capacity_all_zero_column_flagged_grid_limited():
    m = matrix_of([1024, 8192], [16], [[0.0], [0.0]])
    est, _ = infer_capacity(m, 4)
    assert est.raw == 8192
    assert "grid maximum" in est.flag


def test_capacity_below_grid_minimum_errors():
    m = matrix_of([1024, 2048], [16], [[0.9], [1.0]])
    with pytest.raises(Indeterminate, match="below grid minimum"):
        infer_capacity(m, 4)


def test_capacity_missing_reference_column_falls_back():
    m = matrix_of([1024, 2048], [64], [[0.0], [0.9]])
    est, ev = infer_capacity(m, 4)  # 2^4 absent, N=64 used instead
    assert est.rounded == 1024
    assert "not measured" in ev.note


# ---------------------------------------------------------------------------
# index_hi
# ---------------------------------------------------------------------------

def test_index_hi_plateau_boundary():
    # columns 2^15..2^19 mutually similar, 2^14 differs -> 14
    rows = [1, 2, 4, 8, 16]
    cols = [1 << j for j in range(14, 20)]
    table = [[0.0] * 6,
             [0.0] * 6,
             [0.0, 1.0, 1.0, 1.0, 1.0, 1.0],
             [1.0] * 6,
             [1.0] * 6]
    hi, ev = infer_index_hi(matrix_of(rows, cols, table))
    assert hi == 14
    assert ev.details["one_based"] == 15


def test_index_hi_simulated_256_sets():
    g = BtbGeometry.from_sets(256, 2, 4)  # index bits 4..11
    m = sweep_simulator(g, hypothesis_grids(g))
    hi, ev = infer_index_hi(m)
    assert hi == 11
    assert 1 << 12 in ev.details["plateau"]


def test_index_hi_single_column_indeterminate():
    m = matrix_of([1, 2, 4], [1 << 15], [[0.0], [0.0], [1.0]])
    with pytest.raises(Indeterminate, match="two stride columns"):
        infer_index_hi(m)


def test_index_hi_all_columns_similar_indeterminate():
    m = matrix_of([1, 2], [1 << 15, 1 << 16, 1 << 17],
                  [[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])
    with pytest.raises(Indeterminate, match="never change"):
        infer_index_hi(m)


def test_index_hi_tolerates_single_event_flips():
    # one stray miss at B=1 in one plateau column must not tear the plateau
    rows = [1, 2, 4, 8]
    cols = [1 << j for j in range(14, 18)]
    table = [[0.0, 0.0, 1.0, 0.0],   # B=1: single noise event at 2^16
             [0.0, 0.0, 0.0, 0.0],
             [0.0, 1.0, 1.0, 1.0],
             [1.0, 1.0, 1.0, 1.0]]
    hi, _ = infer_index_hi(matrix_of(rows, cols, table))
    assert hi == 14


# ---------------------------------------------------------------------------
# ways
# ---------------------------------------------------------------------------

def test_ways_dissent_vote():
    # B=2 disagrees across single-set strides (1.0 at 2^15, 0.0 at 2^17);
    # the vote still lands on 2 and the dissent is reported.
    rows = [1, 2, 4, 8]
    cols = [1 << j for j in range(15, 20)]
    table = [[0.0, 0.0, 0.0, 0.0, 0.0],
             [1.0, 0.0, 0.0, 0.0, 0.0],
             [1.0, 1.0, 1.0, 1.0, 1.0],
             [1.0, 1.0, 1.0, 1.0, 1.0]]
    ways, ev = infer_ways(matrix_of(rows, cols, table), 14)
    assert ways == 2
    assert "dissent" in ev.note and f"N={1 << 15}" in ev.note
    assert ev.details["votes"][str(1 << 15)] == 1


def test_ways_simulated_four_way():
    g = BtbGeometry.from_sets(128, 4, 4)
    m = sweep_simulator(g, hypothesis_grids(g))
    ways, _ = infer_ways(m, g.index_hi)
    assert ways == 4


def test_ways_direct_mapped():
    rows = [1, 2, 4]
    cols = [1 << 15, 1 << 16]
    table = [[0.0, 0.0], [1.0, 1.0], [1.0, 1.0]]
    ways, _ = infer_ways(matrix_of(rows, cols, table), 14)
    assert ways == 1


def test_ways_without_single_set_columns():
    m = matrix_of([1, 2], [8, 16], [[0.0, 0.0], [0.0, 0.0]])
    with pytest.raises(Indeterminate, match="single-set"):
        infer_ways(m, 14)


# ---------------------------------------------------------------------------
# cross_check
# ---------------------------------------------------------------------------

def test_cross_check_consistent_a72():
    ok, note = cross_check(4096, 4, 14, 2)
    assert ok and "2^11" in note


def test_cross_check_inconsistent_suggests_relaxations():
    ok, note = cross_check(4096, 4, 14, 4)
    assert not ok
    assert "ways=2" in note and "capacity=8192" in note


def test_cross_check_consistent_smaller():
    ok, _ = cross_check(2048, 4, 13, 2)
    assert ok


# ---------------------------------------------------------------------------
# infer_all
# ---------------------------------------------------------------------------

def test_infer_all_recovers_simulated_a72():
    m = sweep_simulator(G_A72, [preset_grid("capacity"), preset_grid("set-index")])
    rep = infer_all(m)
    assert rep.complete
    assert rep.capacity.rounded == 4096
    assert (rep.index_lo, rep.index_hi) == (4, 14)
    assert rep.sets == 2048 and rep.ways == 2
    assert rep.consistent is True


def test_infer_all_partial_without_single_set_columns():
    m = run_sweep(SimulatorBackend(G_A72), preset_grid("capacity"))
    rep = infer_all(m)
    assert rep.capacity is not None and rep.index_lo == 4
    assert rep.ways is None
    assert "ways" in rep.indeterminate
    assert not rep.complete
    assert rep.consistent is None


def test_infer_all_direct_mapped_geometry():
    g = BtbGeometry.from_sets(4096, 1, 4)
    m = sweep_simulator(g, hypothesis_grids(g))
    rep = infer_all(m)
    assert rep.ways == 1 and rep.sets == 4096
    assert rep.capacity.rounded == 4096 and rep.consistent is True


def test_infer_all_roundtrip_sampled_geometries():
    rng = random.Random(31337)
    picks = set()
    while len(picks) < 10:
        picks.add((rng.choice(range(6, 13)), rng.choice([1, 2, 4, 8]), rng.choice([2, 3, 4, 5, 6])))
    for k, ways, lo in sorted(picks):
        g = BtbGeometry.from_sets(1 << k, ways, lo)
        rep = infer_all(sweep_simulator(g, hypothesis_grids(g)))
        assert rep.complete, (k, ways, lo, rep.indeterminate)
        assert rep.capacity.rounded == g.capacity
        assert rep.index_lo == g.index_lo and rep.index_hi == g.index_hi
        assert rep.ways == g.ways and rep.consistent is True


# ---------------------------------------------------------------------------
# properties: monotonicity, clamping, evidence, config
# ---------------------------------------------------------------------------

def test_theta_low_monotone_in_capacity_raw():
    m = hardware_capacity_matrix()
    raws = []
    for theta in (0.05, 0.10, 0.25, 0.49, 0.60, 0.99):
        cfg = InferenceConfig(theta_low=theta)
        est, _ = infer_capacity(m, 4, cfg)
        raws.append(est.raw)
    assert raws == sorted(raws)


def test_inference_invariant_under_clamping_inputs():
    m = hardware_capacity_matrix()
    assert m.has_rates_above_one
    clamped = MissMatrix(m.b_values, m.n_values,
                         {k: min(v, 1.0) for k, v in m.cells.items()},
                         dict(m.counts), dict(m.metadata))
    ra, rb = infer_all(m), infer_all(clamped)
    assert ra.capacity == rb.capacity
    assert (ra.index_lo, ra.index_hi, ra.ways) == (rb.index_lo, rb.index_hi, rb.ways)
    assert ra.clamped_inputs and not rb.clamped_inputs


def test_every_conclusion_cites_at_least_two_cells():
    m = sweep_simulator(G_A72, [preset_grid("capacity"), preset_grid("set-index")])
    rep = infer_all(m)
    assert len(rep.evidence) == 4
    for ev in rep.evidence:
        assert len(ev.cells) >= 2, ev.parameter


def test_config_validation():
    with pytest.raises(ValueError):
        InferenceConfig(theta_low=1.5)
    with pytest.raises(ValueError):
        InferenceConfig(delta_jump=0.04, epsilon_similar=0.05)
    with pytest.raises(ValueError):
        InferenceConfig.from_dict({"theta_low": 0.2, "bogus": 1})
    cfg = InferenceConfig.from_dict({"theta_low": 0.3})
    assert cfg.theta_low == 0.3 and cfg.delta_jump == 0.20


def test_report_serialization_and_text():
    m = sweep_simulator(G_A72, [preset_grid("capacity"), preset_grid("set-index")])
    rep = infer_all(m)
    doc = rep.to_dict()
    assert doc["index_lo"] == {"zero_based": 4, "one_based": 5}
    assert doc["index_hi"] == {"zero_based": 14, "one_based": 15}
    text = rep.to_text()
    assert "bit 4 (0-based) = 5th bit (1-based)" in text
    assert "2048" in text
    import json
    json.loads(rep.to_json_bytes())
