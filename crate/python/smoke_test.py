"""Smoke test for the mnl_online_py extension.

Build and copy the module next to this file first:

    cargo build --release -p mnl-online-py --features extension-module
    cp target/release/libmnl_online_py.so python/mnl_online_py.so
    python3 python/smoke_test.py
"""

import math
import os
import random
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import mnl_online_py as m  # noqa: E402


def check_oracle():
    prices, b0 = m.optimal_prices([0.0], [1.0], [[1.0]])
    assert abs(b0 - 0.2784645428) < 1e-9, b0
    assert abs(prices[0] - 1.0 - b0) < 1e-12
    assert m.p_max(1.0, 0.5, 2) == 7.0
    q = m.pricing_probs([0.3, 0.1], [0.6, 0.2], [[0.5, 0.5], [1.0, 0.0]], prices * 2)
    assert abs(sum(q) - 1.0) < 1e-12


def check_projection():
    z = m.project_h_norm([3.0, 0.0], [[1.0, 0.0], [0.0, 1.0]], 1.0)
    assert abs(z[0] - 1.0) < 1e-12 and abs(z[1]) < 1e-12
    z = m.project_h_norm([0.0, -2.0], [[2.0, 0.0], [0.0, 1.0]], 5.0, [[0.0, 1.0]], [0.5])
    assert abs(z[1] - 0.5) < 1e-12


def check_errors():
    try:
        m.p_max(1.0, 0.0, 2)
    except ValueError as e:
        assert "L > 0" in str(e)
    else:
        raise AssertionError("expected ValueError")
    try:
        m.run_experiment("env.bogus = 1")
    except ValueError as e:
        assert "env.bogus" in str(e)
    else:
        raise AssertionError("expected ValueError")


def check_pricer():
    rng = random.Random(0)
    theta, alpha = [0.2, -0.1], [0.8, 0.1]
    pricer = m.OnsPricer(d=2, w=1.0, l=0.5, k=2, seed=1)
    ctx = [[0.8, 0.1], [0.7, -0.3]]
    for _ in range(200):
        prices = pricer.select_prices(ctx)
        assert all(0.0 <= p <= pricer.p_max for p in prices)
        q = m.pricing_probs(theta, alpha, ctx, prices)
        chosen = rng.choices(range(len(q)), weights=q)[0]
        pricer.observe(ctx, prices, chosen)
    assert pricer.t == 200
    assert math.sqrt(sum(g * g for g in pricer.gamma)) <= 1.0 + 1e-9


def check_ofu():
    rng = random.Random(1)
    theta = [0.6, -0.4]
    learner = m.OfuMnl(d=2, k=2, w=1.0, horizon=100)
    cands = [[1.0, 0.0], [0.0, 1.0], [-0.6, 0.8], [0.5, 0.5]]
    for _ in range(50):
        s = learner.select(cands)
        q = m.assortment_probs(theta, cands, s)
        learner.observe(cands, s, rng.choices(range(len(q)), weights=q)[0])
    assert learner.t == 50 and len(learner.theta_hat) == 2


def check_harness():
    trs = m.run_experiment("policy = onssc\nenv.d = 2\nenv.k = 2", [("horizon", "50"), ("seeds", "0..3")])
    assert [t.seed for t in trs] == [0, 1, 2]
    for t in trs:
        assert len(t.cum_regret) == 50 and t.policy == "onssc"
        assert all(b >= a for a, b in zip(t.cum_regret, t.cum_regret[1:]))
    trs = m.run_experiment("problem = assortment\nhorizon = 30\nseeds = 4\nenv.d = 3\nenv.k = 2\nenv.n = 5")
    assert all(0.0 < k <= 1.0 for k in trs[0].kappa_diag)
    print(trs[0])


if __name__ == "__main__":
    for check in (check_oracle, check_projection, check_errors, check_pricer, check_ofu, check_harness):
        check()
        print(f"{check.__name__}: ok")
    print("smoke test passed")
