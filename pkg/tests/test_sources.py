import numpy as np
import pytest

import oracles
from pexml.assembly import assemble_mass
from pexml.grid import build_fine_grid
from pexml.sources import (
    BlockSourceLoad,
    default_initial_condition,
    discretize_source,
    make_source,
    rectangle_indicator_load,
    source_eval,
)
from pexml.spaces import MultiscaleSpaces


def test_example1_zero_outside_blocks():
    spec = make_source(1, [1.0, 2.0, 3.0, 4.0])
    assert source_eval(spec, (0.5, 0.5), 0.003) == 0.0
    assert source_eval(spec, (0.0, 0.95), 0.001) == 0.0


def test_example1_quarter_period_value():
    spec = make_source(1, [1.0, 0.0, 0.0, 0.0])
    t = spec.final_time / 4.0
    assert source_eval(spec, (0.25, 0.25), t) == pytest.approx(100.0, rel=1e-12)


def test_example1_second_block_uses_w3_w4():
    spec = make_source(1, [0.0, 0.0, 2.0, 0.0])
    t = spec.final_time / 4.8  # 2.4*pi*t/T = pi/2
    assert source_eval(spec, (0.85, 0.85), t) == pytest.approx(200.0, rel=1e-12)


def test_zero_parameters_zero_source():
    spec = make_source(2, np.zeros(10))
    for point in ((0.25, 0.25), (0.55, 0.55), (0.85, 0.25)):
        assert source_eval(spec, point, 0.004) == 0.0


def test_example2_block_positions():
    spec = make_source(2, np.arange(1.0, 11.0))
    rects = [b.rect for b in spec.blocks]
    assert (0.2, 0.3, 0.8, 0.9) in rects and (0.8, 0.9, 0.2, 0.3) in rects
    assert (0.5, 0.6, 0.5, 0.6) in rects


def test_example3_is_nonlinear_short_horizon():
    spec = make_source(3, np.full(10, 2.0))
    assert spec.nonlinear
    assert spec.final_time == pytest.approx(0.001)


def test_unknown_example_and_bad_shape():
    with pytest.raises(ValueError, match="unknown example"):
        make_source(4, np.zeros(4))
    with pytest.raises(ValueError, match="parameters"):
        make_source(1, np.zeros(10))


def test_discretized_zero_source():
    grid = build_fine_grid(8)
    spec = make_source(1, np.zeros(4))
    assert np.max(np.abs(discretize_source(spec, grid, 0.002))) == 0.0


def test_full_domain_indicator_equals_mass_action():
    grid = build_fine_grid(6)
    load = rectangle_indicator_load(grid, (0.0, 1.0, 0.0, 1.0))
    mass_rows = np.asarray(assemble_mass(grid).sum(axis=1)).ravel()
    assert np.max(np.abs(load - mass_rows)) < 1e-14
    assert load.sum() == pytest.approx(1.0, abs=1e-13)


def test_discretized_block_matches_loop_oracle():
    grid = build_fine_grid(8)  # blocks do not align with this grid
    spec = make_source(1, [2.0, 0.5, 1.0, 3.0])
    t = 0.0042
    ours = discretize_source(spec, grid, t)
    ref = oracles.dense_load(grid, lambda x: source_eval(spec, x, t))
    assert np.max(np.abs(ours - ref)) < 1e-12


def test_aligned_block_load_is_exact():
    grid = build_fine_grid(40)
    load = rectangle_indicator_load(grid, (0.2, 0.3, 0.2, 0.3))
    assert load.sum() == pytest.approx(0.01, rel=1e-12)


def test_block_source_load_combination(rng):
    grid = build_fine_grid(10)
    spec = make_source(1, [1.5, 2.5, 3.5, 4.5])
    fast = BlockSourceLoad(spec, grid)
    for t in (0.0, 0.0013, 0.01):
        direct = discretize_source(spec, grid, t)
        assert np.max(np.abs(fast(t) - direct)) < 1e-12


def test_block_source_reduced(rng):
    grid = build_fine_grid(10)
    q, _ = np.linalg.qr(rng.normal(size=(grid.node_count, 5)))
    full = np.arange(grid.node_count)
    spaces = MultiscaleSpaces(
        basis_implicit=q[:, :3], basis_explicit=q[:, 3:],
        col_element_implicit=np.zeros(3, dtype=np.int64),
        col_element_explicit=np.zeros(2, dtype=np.int64),
        support_implicit=[full] * 3, support_explicit=[full] * 2,
    )
    spec = make_source(1, [1.0, 2.0, 3.0, 4.0])
    fast = BlockSourceLoad(spec, grid, spaces)
    g1, g2 = fast.reduced(0.004)
    fine = fast(0.004)
    assert np.allclose(g1, q[:, :3].T @ fine, atol=1e-13)
    assert np.allclose(g2, q[:, 3:].T @ fine, atol=1e-13)
    plain = BlockSourceLoad(spec, grid)
    with pytest.raises(ValueError):
        plain.reduced(0.004)


def test_diff_norm_single_block_analytic():
    grid = build_fine_grid(4)
    a = BlockSourceLoad(make_source(1, [1.0, 0.0, 0.0, 0.0]), grid)
    b = BlockSourceLoad(make_source(1, [3.0, 0.0, 0.0, 0.0]), grid)
    t = a.spec.final_time / 4.0
    # difference amplitude 200 on a 0.1x0.1 block
    assert a.diff_norm(b, t) == pytest.approx(200.0 * 0.1, rel=1e-12)


def test_default_initial_condition_profile():
    grid = build_fine_grid(20)
    u0 = default_initial_condition(grid)
    assert u0[grid.node_index(10, 10)] == pytest.approx(1.0)
    boundary = np.where(
        (grid.nodes[:, 0] == 0) | (grid.nodes[:, 0] == 1)
        | (grid.nodes[:, 1] == 0) | (grid.nodes[:, 1] == 1)
    )[0]
    assert np.max(np.abs(u0[boundary])) == 0.0
    assert np.all(u0 >= 0.0)
