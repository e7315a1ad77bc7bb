"""Exhaustive ground-truth oracle and the flip-flop x cycle grid simulator."""

from __future__ import annotations

import numpy as np
import pytest

from resacc.formats import NumericFormat
from resacc.microdnn import FaultSemantics
from resacc.oracle import (
    GridModel,
    ScaleGuardExceeded,
    SiteArchive,
    analytical_class_probs,
    exhaustive_ra,
    grid_simulate,
    live_evaluator,
    measured_uf,
)
from resacc.probtransfer import ProbClass, SiteProbabilityTable, build_table, ra_expected
from resacc.profile import (
    CONTROL_LAYER,
    AcceleratorConfig,
    FFType,
    LayerStats,
    NetworkProfile,
    SoftwareFaultSite,
    derive_profile,
)
from resacc.toynets import make_config, make_dense_toy, make_evalset

from conftest import build_context


# --- exhaustive oracle ------------------------------------------------------

def test_exhaustive_ra_equals_archive_weighted_sum(dense_ctx, dense_oracle):
    res, arch = dense_oracle
    total = 0.0
    for c in dense_ctx.table.classes:
        arr = arch.entries[(c.layer_id, c.var_type)]
        total += c.per_var_per_bit_prob * arr.sum()
    assert res.ra == pytest.approx(total, rel=1e-12)
    assert res.sa == arch.sa


def test_crash_classes_archived_as_zero(dense_oracle):
    _, arch = dense_oracle
    assert np.all(arch.entries[(CONTROL_LAYER, FFType.CONTROL_GLOBAL)] == 0.0)


def test_single_site_ra_identity():
    """A one-site system reduces RA to UF * A + (1 - UF) * SA exactly."""
    table = SiteProbabilityTable(
        classes=[ProbClass(0, FFType.INPUT_ACTIVATION, 1, 1.0)],
        bit_width=1,
        normalization=1.0,
    )
    res = ra_expected(table, lambda s: 0.2, sa=1.0, uf=lambda lid: 0.3)
    assert res.ra == pytest.approx(0.3 * 0.2 + 0.7 * 1.0, rel=1e-15)


def test_scale_guard_trips(dense_ctx):
    with pytest.raises(ScaleGuardExceeded):
        exhaustive_ra(
            dense_ctx.profile,
            dense_ctx.config,
            dense_ctx.net,
            dense_ctx.evalset,
            FaultSemantics.TRUE,
            max_inferences=100,
        )


def test_archive_save_load_round_trip(dense_oracle, tmp_path):
    _, arch = dense_oracle
    path = tmp_path / "archive.npz"
    arch.save(path)
    loaded = SiteArchive.load(path)
    assert loaded.sa == arch.sa
    assert loaded.semantics is arch.semantics
    assert set(loaded.entries) == set(arch.entries)
    for key, arr in arch.entries.items():
        assert np.array_equal(loaded.entries[key], arr)


def test_class_mean_matches_entries(dense_ctx, dense_oracle):
    _, arch = dense_oracle
    c = dense_ctx.table.classes[0]
    arr = arch.entries[(c.layer_id, c.var_type)]
    for b in (0, dense_ctx.table.bit_width - 1):
        assert arch.class_mean(c.layer_id, c.var_type, b) == pytest.approx(
            arr[:, b].mean()
        )


def test_crash_free_variant_has_strictly_higher_ra(dense_ctx, dense_oracle):
    res, arch = dense_oracle
    cfg = dense_ctx.config.with_raw_fit({FFType.CONTROL_GLOBAL: 1e-12})
    table = build_table(dense_ctx.profile, cfg)
    crash_free = ra_expected(table, arch.evaluator, arch.sa)
    assert crash_free.ra > res.ra


def test_live_evaluator_matches_archive(dense_ctx, dense_oracle):
    _, arch = dense_oracle
    ev = live_evaluator(
        dense_ctx.net, dense_ctx.evalset, dense_ctx.profile, dense_ctx.config
    )
    rng = np.random.default_rng(0)
    sites = []
    for c in dense_ctx.table.classes:
        if c.var_type is FFType.CONTROL_GLOBAL:
            continue
        for _ in range(3):
            sites.append(
                SoftwareFaultSite(
                    c.layer_id,
                    c.var_type,
                    int(rng.integers(c.var_count)),
                    int(rng.integers(dense_ctx.table.bit_width)),
                )
            )
    for s in sites:
        a = ev(s)
        assert a == arch.evaluator(s)
        assert ev(s) == a  # memoized second lookup agrees


def test_live_evaluator_sw_rejects_crash_sites(dense_ctx):
    ev = live_evaluator(
        dense_ctx.net,
        dense_ctx.evalset,
        dense_ctx.profile,
        dense_ctx.config,
        FaultSemantics.SW,
    )
    with pytest.raises(ValueError):
        ev(SoftwareFaultSite(CONTROL_LAYER, FFType.CONTROL_GLOBAL, 0, 0))


# --- grid simulator ---------------------------------------------------------

def _two_ff_grid(utilization: float = 1.0) -> GridModel:
    """One 4-MAC layer on a machine with one weight FF and one input FF."""
    profile = NetworkProfile(
        layers=[
            LayerStats(
                layer_id=0,
                mac_count=4,
                var_count={FFType.INPUT_ACTIVATION: 4, FFType.WEIGHT: 4},
                utilization=utilization,
            )
        ]
    )
    config = AcceleratorConfig(
        ff_count={FFType.INPUT_ACTIVATION: 1, FFType.WEIGHT: 1},
        raw_fit={FFType.INPUT_ACTIVATION: 600.0, FFType.WEIGHT: 600.0},
        numeric_format=NumericFormat.FP32,
        reuse={FFType.INPUT_ACTIVATION: 1, FFType.WEIGHT: 1},
    )
    return GridModel.build(profile, config, target_cols=4)


def test_hand_sized_grid_shape_and_frequencies():
    grid = _two_ff_grid()
    assert grid.total_cols == 4 and grid.cell_count() == 8
    tally = grid_simulate(grid, pin_count=200_000, seed=1)
    assert tally.idle == 0
    for t in (FFType.WEIGHT, FFType.INPUT_ACTIVATION):
        freq = tally.empirical(0, t)
        sigma = np.sqrt(0.25 / tally.pins)
        assert abs(freq - 0.5) <= 4 * sigma


def test_half_utilized_grid_idles_half_the_pins():
    grid = _two_ff_grid(utilization=0.5)
    tally = grid_simulate(grid, pin_count=200_000, seed=2)
    sigma = np.sqrt(0.25 * tally.pins)
    assert abs(tally.idle - 0.5 * tally.pins) <= 4 * sigma
    # conditioned on landing in live cells, the class split is unchanged
    assert abs(tally.empirical(0, FFType.WEIGHT) - 0.5) < 0.01
    assert measured_uf(grid)[0] == pytest.approx(0.5)


def test_grid_pin_conservation(dense_ctx):
    grid = GridModel.build(dense_ctx.profile, dense_ctx.config)
    tally = grid_simulate(grid, pin_count=100_000, seed=3)
    assert tally.occupied_pins() + tally.idle == tally.pins


def test_grid_rejects_bad_pin_count(dense_ctx):
    grid = GridModel.build(dense_ctx.profile, dense_ctx.config)
    with pytest.raises(ValueError):
        grid_simulate(grid, pin_count=0, seed=0)


def test_full_utilization_grid_matches_analytical(dense_ctx):
    grid = GridModel.build(dense_ctx.profile, dense_ctx.config)
    pins = 10**6
    tally = grid_simulate(grid, pins, seed=4)
    analytical = analytical_class_probs(dense_ctx.profile, dense_ctx.config)
    emp = np.array([tally.empirical(*k) for k in analytical])
    ana = np.array([analytical[k] for k in analytical])
    assert np.corrcoef(emp, ana)[0, 1] >= 0.999
    sigma = np.sqrt(ana * (1.0 - ana) / pins)
    assert np.all(np.abs(emp - ana) <= 3.5 * sigma)


def test_partial_utilization_shifts_mass_and_uf_closes_gap():
    """The utilization-unaware analytical table overestimates how often an
    underutilized layer is hit; scaling each layer's analytical mass by its
    utilization recovers the grid frequencies."""
    net = make_dense_toy(seed=3)
    cfg = make_config()
    util = {0: 0.4, 1: 1.0}
    profile = derive_profile(net, cfg, utilization=util)
    grid = GridModel.build(profile, cfg)
    tally = grid_simulate(grid, 10**6, seed=5)
    analytical = analytical_class_probs(profile, cfg)
    keys = list(analytical)

    def layer_share(freqs):
        return sum(f for k, f in zip(keys, freqs) if k[0] == 0)

    emp = [tally.empirical(*k) for k in keys]
    ana = [analytical[k] for k in keys]
    assert layer_share(emp) < layer_share(ana)
    corrected = np.array(
        [a * (util.get(k[0], 1.0) if k[0] != CONTROL_LAYER else 1.0)
         for k, a in zip(keys, ana)]
    )
    corrected /= corrected.sum()
    assert np.all(np.abs(np.array(emp) - corrected) < 0.003)
    assert measured_uf(grid)[0] == pytest.approx(0.4)


def test_grid_utilization_matches_exhaustive_uf_ra(dense_oracle):
    """UF-weighted expected RA from the analytical path agrees with feeding
    the same UF map to the exhaustive oracle."""
    _, arch = dense_oracle
    ctx = build_context(make_dense_toy(seed=3), make_config(),
                        utilization={0: 0.7, 1: 0.9})
    res, _ = exhaustive_ra(
        ctx.profile, ctx.config, ctx.net, ctx.evalset,
        FaultSemantics.TRUE, uf={0: 0.7, 1: 0.9},
    )
    manual = ra_expected(
        ctx.table, arch.evaluator, arch.sa,
        uf=lambda lid: {0: 0.7, 1: 0.9}.get(lid, 1.0),
    )
    assert res.ra == pytest.approx(manual.ra, rel=1e-12)
    assert res.ra > ra_expected(ctx.table, arch.evaluator, arch.sa).ra
