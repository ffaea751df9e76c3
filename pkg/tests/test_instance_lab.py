import math

import numpy as np
import pytest
import sympy

import marketgames as mg
from marketgames.instance_lab import (ExperimentConfig, format_value,
                                      gen_positive_leontief, run_experiment,
                                      write_report)


def test_gen_identity_leontief():
    assert (mg.gen_identity_leontief(2).matrix == np.eye(2)).all()
    inst5 = mg.gen_identity_leontief(5)
    assert (inst5.n, inst5.m) == (5, 5)
    single = mg.gen_identity_leontief(1)
    out = mg.fisher_outcome(single, single.matrix)
    assert out.true_utilities == pytest.approx([1.0])


def test_gen_example_31_values():
    inst = mg.gen_example_3_1()
    assert (inst.matrix == [[1.0, 0.0], [0.5, 0.5]]).all()
    assert not inst.perfect_competition()  # only agent 2 values good 2


def test_gen_tp_nonexistence_values():
    inst = mg.gen_tp_nonexistence()
    assert (inst.matrix == [[0.5, 0.5], [0.9, 0.1]]).all()


def test_tp_nonexistence_equations_symbolically():
    # both players must receive the goods at ratios matching their
    # requirements; player 1's condition reduces to b1 = b2 and player 2's to
    # 8 b2^2 + 8 b1 b2 = 9 b1 + 7 b2.  Jointly they force the boundary b = 1,
    # so no interior equilibrium exists.
    b1, b2 = sympy.symbols("b1 b2", real=True)
    eq1 = sympy.Eq(b1 * (2 - b1 - b2), (1 - b1) * (b1 + b2))
    eq2 = sympy.Eq(8 * b2 ** 2 + 8 * b1 * b2, 9 * b1 + 7 * b2)
    assert sympy.simplify(sympy.expand(eq1.lhs - eq1.rhs) - (b1 - b2)) == 0
    sols = sympy.solve([eq1, eq2], [b1, b2], dict=True)
    assert sols
    for sol in sols:
        v1, v2 = sympy.nsimplify(sol[b1]), sympy.nsimplify(sol[b2])
        interior = (v1.is_real and v2.is_real
                    and 0 < float(v1) < 1 and 0 < float(v2) < 1)
        assert not interior
    assert any(sol[b1] == 1 and sol[b2] == 1 for sol in sols)


def test_tp_nonexistence_delta_dynamics_converge():
    rep = mg.br_dynamics(mg.gen_tp_nonexistence(), 1e-3, max_rounds=500, tol=1e-9)
    assert rep.converged


def test_example_lin_family_gain_profile():
    # at eps = 0.5 the profile is the symmetric equilibrium of the family;
    # away from it the flexible agents hold a small but real improvement
    inst, bids = mg.gen_example_lin_family(0.5)
    assert abs(mg.verify_tp_ne(inst, bids, 0.0).max_gain) <= 1e-9
    inst, bids = mg.gen_example_lin_family(0.3)
    gain = mg.verify_tp_ne(inst, bids, 0.0).max_gain
    assert 1e-4 < gain < 1e-2


def test_example_leo_family_equilibria():
    for a in (0.3, 0.5, 0.99):
        inst, bids = mg.gen_example_leo_family(a)
        rep = mg.verify_tp_ne(inst, bids, 0.0, 1e-8)
        assert abs(rep.max_gain) <= 1e-9
        if a == 0.5:
            assert rep.utilities == pytest.approx([0.5, 0.5])


def test_gen_random_determinism_and_competition():
    a = mg.gen_random(4, 3, "linear", seed=42)
    b = mg.gen_random(4, 3, "linear", seed=42)
    assert (a.matrix == b.matrix).all()
    assert (mg.gen_random(4, 3, "linear", seed=1, sparsity=0.0).matrix > 0).all()
    for seed in range(100):
        inst = mg.gen_random(3, 4, "leontief", seed=seed, sparsity=0.4)
        assert inst.perfect_competition()
        assert inst.matrix.max(axis=1) == pytest.approx(np.ones(3))


def test_gen_positive_leontief_prices_positive():
    inst, x, p = gen_positive_leontief(4, 3, seed=3)
    assert p.min() > 0.1
    assert mg.duality_gap_leontief(inst, x, p) <= 1e-10
    assert x.sum(axis=0) == pytest.approx(np.ones(3))


def test_instance_roundtrip_bit_identical(tmp_path):
    inst = mg.gen_random(3, 4, "ces", rho=-1.5, seed=77)
    path = tmp_path / "inst.json"
    mg.save_instance(inst, path)
    again = mg.load_instance(path)
    assert (again.matrix == inst.matrix).all()
    assert (again.budgets == inst.budgets).all()
    assert again.valuations.rho == inst.valuations.rho
    mg.save_instance(again, tmp_path / "b.json")
    assert (tmp_path / "b.json").read_text() == path.read_text()


def test_report_writer_format(tmp_path):
    path = tmp_path / "r.txt"
    write_report(path, {"x": 1 / 3, "flag": True, "vec": np.array([1.0, 0.25])})
    assert path.read_text() == "x = 0.333333333333\nflag = true\nvec = 1 0.25\n"
    assert format_value(1234567.0) == "1234567"


def test_run_experiment_fisher_identity():
    recs = run_experiment(ExperimentConfig(source="identity-leontief",
                                           mechanism="fisher", n=5))
    assert len(recs) == 1
    assert recs[0].ratio == pytest.approx(5.0, abs=1e-8)
    assert recs[0].proportional
    assert not recs[0].failure


def test_run_experiment_tp_identity():
    recs = run_experiment(ExperimentConfig(source="identity-leontief",
                                           mechanism="trading_post", n=5,
                                           delta=1e-4))
    assert recs[0].ratio <= 1.0025
    assert recs[0].eps_br <= 1e-8


def test_run_experiment_random_linear_batch(tmp_path):
    out = tmp_path / "records.csv"
    recs = run_experiment(ExperimentConfig(source="random", kind="linear",
                                           mechanism="trading_post", n=4, m=3,
                                           count=5, seed=10,
                                           out_path=str(out)))
    assert len(recs) == 5
    for r in recs:
        assert not r.failure
        assert r.ratio <= 2.001
        assert r.ratio >= 1 - 1e-6
    header = out.read_text().splitlines()[0]
    assert header == ("instance_id,mechanism,delta,nsw_opt,nsw_eq,ratio,"
                      "eps_br,eps_market,proportional,seconds,failure")


def test_run_experiment_leontief_tp_needs_delta():
    recs = run_experiment(ExperimentConfig(source="identity-leontief",
                                           mechanism="trading_post", n=3,
                                           delta=0.0))
    assert recs[0].failure  # recorded, not raised
    assert math.isnan(recs[0].ratio)


def test_run_experiment_failure_tag_keeps_batch_alive():
    recs = run_experiment(ExperimentConfig(source="random", kind="ces", rho=0.5,
                                           mechanism="fisher", n=3, m=2, count=2))
    assert len(recs) == 2
    assert all(r.failure for r in recs)


def test_experiment_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(source="random", mechanism="auction")
    with pytest.raises(ValueError):
        ExperimentConfig(source="random", delta=-1.0)
