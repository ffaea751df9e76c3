import numpy as np
import pytest

import marketgames as mg
from marketgames.instance_lab import gen_positive_leontief
from marketgames.trading_post import check_bid_profile, effective_bids


def test_tp_allocate_symmetric():
    x = mg.tp_allocate([[0.5, 0.5], [0.5, 0.5]], 0.0)
    assert x == pytest.approx(np.full((2, 2), 0.5))


def test_tp_allocate_voids_small_bids():
    x = mg.tp_allocate([[0.05, 0.95], [0.5, 0.5]], 0.1)
    assert x[0] == pytest.approx([0.0, 0.95 / 1.45])
    assert x[1] == pytest.approx([1.0, 0.5 / 1.45])


def test_tp_allocate_sole_bidder_and_dead_goods():
    x = mg.tp_allocate([[0.0, 1.0], [0.0, 0.0]], 0.0)
    assert x[0] == pytest.approx([0.0, 1.0])
    assert x[:, 0] == pytest.approx([0.0, 0.0])


def test_br_linear_symmetric():
    r = mg.br_linear(np.array([1.0, 1.0]), 1.0, np.array([1.0, 1.0]))
    assert r.bids == pytest.approx([0.5, 0.5], abs=1e-9)
    assert r.utility == pytest.approx(2 / 3, abs=1e-9)


def test_br_linear_corner_solution():
    # water-filling by hand: lambda = 1/4 puts all budget on the cheap good
    r = mg.br_linear(np.array([1.0, 1.0]), 1.0, np.array([4.0, 1.0]))
    assert r.bids == pytest.approx([0.0, 1.0], abs=1e-9)
    assert r.utility == pytest.approx(0.5, abs=1e-9)
    prof = mg.ValuationProfile("linear", [[1.0, 1.0]])
    grid = mg.br_grid_oracle(prof, 0, 1.0, np.array([4.0, 1.0]), grid_step=1e-3)
    assert r.utility >= grid.utility - 1e-9


def test_br_linear_dominates_safe_bid():
    rng = np.random.default_rng(3)
    for _ in range(20):
        v = rng.uniform(0.1, 1.0, size=3)
        d = rng.uniform(0.2, 2.0, size=3)
        budget = rng.uniform(0.5, 2.0)
        safe = mg.safe_strategy(budget, d)
        safe_util = float(v @ (safe / (safe + d)))
        assert mg.br_linear(v, budget, d).utility >= safe_util - 1e-10


def test_br_linear_monopoly_rules():
    with pytest.raises(ValueError):
        mg.br_linear(np.array([1.0, 1.0]), 1.0, np.array([0.0, 1.0]), delta=0.0)
    r = mg.br_linear(np.array([1.0, 1.0]), 1.0, np.array([0.0, 1.0]), delta=0.05)
    assert r.bids[0] == pytest.approx(0.05)  # monopoly claimed at the floor
    assert r.bids.sum() == pytest.approx(1.0)


def test_br_leontief_symmetric():
    # 2t/(1-t) = 1 at t = 1/3
    r = mg.br_leontief(np.array([1.0, 1.0]), 1.0, np.array([1.0, 1.0]))
    assert r.bids == pytest.approx([0.5, 0.5], abs=1e-9)
    assert r.utility == pytest.approx(1 / 3, abs=1e-9)


def test_br_leontief_vs_grid():
    prof = mg.ValuationProfile("leontief", [[1.0, 1.0]])
    r = mg.br_leontief(np.array([1.0, 1.0]), 1.0, np.array([1.0, 3.0]))
    grid = mg.br_grid_oracle(prof, 0, 1.0, np.array([1.0, 3.0]), grid_step=1e-3)
    assert abs(r.utility - grid.utility) <= 1e-3
    assert r.utility >= grid.utility - 1e-9


def test_br_leontief_single_demanded_good():
    r = mg.br_leontief(np.array([1.0, 0.0]), 1.0, np.array([1.0, 1.0]))
    assert r.bids == pytest.approx([1.0, 0.0])
    assert r.utility == pytest.approx(0.5)


def test_br_leontief_floor_feasibility():
    with pytest.raises(ValueError):
        mg.br_leontief(np.array([1.0, 1.0]), 0.05, np.array([1.0, 1.0]), delta=0.2)


def test_br_concave_numeric_ces_symmetric():
    prof = mg.ValuationProfile("ces", [[1.0, 1.0]], rho=0.5)
    r = mg.br_concave_numeric(prof, 0, 1.0, np.array([1.0, 1.0]), tol=1e-10)
    assert r.bids == pytest.approx([0.5, 0.5], abs=1e-7)


def test_br_concave_numeric_matches_analytic():
    rng = np.random.default_rng(11)
    for _ in range(10):
        v = rng.uniform(0.1, 1.0, size=3)
        d = rng.uniform(0.2, 2.0, size=3)
        lin = mg.ValuationProfile("linear", v[None, :])
        a = mg.br_linear(v, 1.0, d)
        n = mg.br_concave_numeric(lin, 0, 1.0, d, tol=1e-10)
        assert abs(a.utility - n.utility) <= 1e-6
        leo = mg.ValuationProfile("leontief", v[None, :])
        a = mg.br_leontief(v, 1.0, d)
        n = mg.br_concave_numeric(leo, 0, 1.0, d, tol=1e-10)
        assert abs(a.utility - n.utility) <= 1e-6


def test_br_concave_numeric_ces_vs_grid():
    rng = np.random.default_rng(5)
    v = rng.uniform(0.2, 1.0, size=3)
    d = rng.uniform(0.3, 1.5, size=3)
    prof = mg.ValuationProfile("ces", v[None, :], rho=-2.0)
    numeric = mg.br_concave_numeric(prof, 0, 1.0, d, tol=1e-10)
    grid = mg.br_grid_oracle(prof, 0, 1.0, d, grid_step=1e-3)
    assert abs(numeric.utility - grid.utility) <= 1e-3


def test_br_grid_oracle_shape_rules():
    prof = mg.ValuationProfile("linear", [[1.0] * 5])
    with pytest.raises(ValueError):
        mg.br_grid_oracle(prof, 0, 1.0, np.ones(5))
    prof4 = mg.ValuationProfile("linear", [[1.0] * 4])
    with pytest.raises(ValueError, match="grid too large"):
        mg.br_grid_oracle(prof4, 0, 1.0, np.ones(4), grid_step=1e-3)


def test_br_grid_oracle_symmetry_and_zeros():
    prof = mg.ValuationProfile("linear", [[1.0, 1.0]])
    r = mg.br_grid_oracle(prof, 0, 1.0, np.array([1.0, 1.0]), grid_step=1e-2)
    assert abs(r.bids[0] - r.bids[1]) <= 1e-2 + 1e-12
    prof0 = mg.ValuationProfile("linear", [[1.0, 0.0]])
    r0 = mg.br_grid_oracle(prof0, 0, 1.0, np.array([1.0, 1.0]), grid_step=1e-2)
    assert r0.bids[1] == 0.0


def test_br_dynamics_leontief_pair():
    inst = mg.make_instance("leontief", [[1.0, 1.0], [1.0, 1.0]])
    rep = mg.br_dynamics(inst, 1e-3, max_rounds=200, tol=1e-9)
    assert rep.converged
    assert rep.utilities == pytest.approx([0.5, 0.5], abs=1e-9)


def test_br_dynamics_nonexistence_example():
    inst = mg.gen_tp_nonexistence()
    rep = mg.br_dynamics(inst, 0.0, max_rounds=5000, tol=1e-12)
    assert not rep.converged
    assert rep.bids[1, 1] < 1e-6
    fee = mg.br_dynamics(inst, 1e-3, max_rounds=500, tol=1e-9)
    assert fee.converged


def test_br_dynamics_linear_family_instance():
    inst, _ = mg.gen_example_lin_family()
    rep = mg.br_dynamics(inst, 0.0, max_rounds=2000, tol=1e-10)
    assert rep.converged
    assert rep.max_gain <= 1e-8
    # single-good agents always spend everything on their good; the flexible
    # agents land inside the documented family
    assert rep.bids[0] == pytest.approx([1.0, 0.0], abs=1e-9)
    assert rep.bids[1] == pytest.approx([0.0, 1.0], abs=1e-9)
    eps = rep.bids[2, 1]
    assert 0.0 <= eps <= 1.0
    assert rep.bids[3] == pytest.approx([eps, 1.0 - eps], abs=1e-6)


def test_br_dynamics_requires_competition_for_linear_delta0():
    with pytest.raises(ValueError):
        mg.br_dynamics(mg.gen_example_3_1(), 0.0)


def test_verify_tp_ne_leo_family():
    inst, bids = mg.gen_example_leo_family(0.3)
    rep = mg.verify_tp_ne(inst, bids, 0.0, 1e-8)
    assert rep.converged
    assert abs(rep.max_gain) <= 1e-9
    inst, bids = mg.gen_example_leo_family(0.99)
    assert abs(mg.verify_tp_ne(inst, bids, 0.0, 1e-8).max_gain) <= 1e-9


def test_verify_tp_ne_market_induced_bids():
    inst, x, p = gen_positive_leontief(3, 3, seed=12)
    rep = mg.verify_tp_ne(inst, x * p, 0.0, 1e-8)
    assert rep.max_gain <= 1e-8


def test_verify_tp_ne_uniform_bids_not_equilibrium():
    inst = mg.gen_example_3_1()
    rep = mg.verify_tp_ne(inst, np.full((2, 2), 0.5), 0.0, 1e-8)
    assert rep.gains[0] > 0.1  # agent 1 should drop its wasted good-2 bid
    assert not rep.converged


def test_ne_to_market_basics():
    prices, alloc = mg.ne_to_market(np.full((2, 2), 0.5))
    assert prices == pytest.approx([1.0, 1.0])
    assert alloc == pytest.approx(np.full((2, 2), 0.5))


def test_ne_to_market_round_trip_identity():
    inst, x, p = gen_positive_leontief(4, 3, seed=9)
    bids = x * p
    prices, alloc = mg.ne_to_market(bids)
    assert prices == pytest.approx(p, abs=1e-12)
    assert alloc == pytest.approx(x, abs=1e-12)


def test_ne_to_market_identity_tp_delta():
    inst = mg.gen_identity_leontief(3)
    rep = mg.br_dynamics(inst, 1e-4, max_rounds=100, tol=1e-10)
    assert rep.converged
    assert rep.prices == pytest.approx(np.ones(3), abs=1e-9)


def test_safe_strategy_equal_and_skewed():
    # against opponent totals D the fraction of every good is exactly
    # B / (B + sum D)
    y = mg.safe_strategy(1.0, np.array([0.5, 0.5]))
    assert y == pytest.approx([0.5, 0.5])
    assert y / (y + 0.5) == pytest.approx([0.5, 0.5])
    d = np.array([1.5, 0.5])
    y = mg.safe_strategy(1.0, d)
    assert y == pytest.approx([0.75, 0.25])
    assert y / (y + d) == pytest.approx([1 / 3, 1 / 3])


def test_safe_strategy_floored_guarantee():
    budget, delta = 1.0, 0.1
    d = np.array([3.0, 0.05])
    total = budget + d.sum()
    z = mg.safe_strategy(budget, d, delta)
    assert (z >= delta - 1e-12).all()
    assert z.sum() == pytest.approx(budget)
    fractions = z / (z + d)
    rho = delta * (d.size - 1) / budget
    assert (fractions >= budget / total * (1 - rho) - 1e-12).all()


def test_safe_strategy_requires_opponent_spend():
    with pytest.raises(ValueError):
        mg.safe_strategy(1.0, np.zeros(2))


def test_best_response_unique_across_initializations():
    rng = np.random.default_rng(2)
    v = rng.uniform(0.2, 1.0, size=3)
    d = rng.uniform(0.3, 1.5, size=3)
    for kind, rho in (("linear", None), ("leontief", None), ("ces", -1.0)):
        prof = mg.ValuationProfile(kind, v[None, :], rho)
        sols = []
        for k in range(10):
            init = rng.dirichlet(np.ones(3))
            r = mg.br_concave_numeric(prof, 0, 1.0, d, delta=0.01,
                                      tol=1e-10, init=init)
            sols.append(r.bids)
        assert np.ptp(np.array(sols), axis=0).max() <= 1e-5


def test_delta_for_eps_certifies():
    m = 3
    eps = 0.01
    delta = mg.delta_for_eps(eps, m)
    assert 0 < delta < min(eps / m ** 2, eps ** 2 / m, 1 / m)
    inst = mg.gen_random(3, m, "leontief", seed=19)
    dyn = mg.br_dynamics(inst, delta, max_rounds=4000, tol=1e-10)
    assert dyn.converged
    rep = mg.verify_eps_market_eq(inst, dyn.allocation, dyn.prices, eps, tol=1e-7)
    assert rep.passed
    with pytest.raises(ValueError):
        mg.delta_for_eps(0.0, 2)


def test_check_bid_profile():
    with pytest.raises(ValueError):
        check_bid_profile([[0.4, 0.4]], np.array([1.0]))
    with pytest.raises(ValueError):
        check_bid_profile([[-0.1, 1.1]], np.array([1.0]))
    b = check_bid_profile([[0.4, 0.6]], np.array([1.0]))
    assert b.shape == (1, 2)
    assert (effective_bids(b, 0.5) == [[0.0, 0.6]]).all()
