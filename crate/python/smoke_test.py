"""Smoke test for the etlqg extension module.

Build first:
    cargo build -p etlqg-python --release --features extension-module
then run:
    python3 python/smoke_test.py
"""

import importlib.util
import itertools
import json
import os
import shutil
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def load():
    try:
        import etlqg

        return etlqg
    except ImportError:
        pass
    built = os.path.join(ROOT, "target", "release", "libetlqg.so")
    if not os.path.exists(built):
        sys.exit(f"extension not built: {built} missing")
    tmp = tempfile.mkdtemp()
    path = os.path.join(tmp, "etlqg.so")
    shutil.copy(built, path)
    spec = importlib.util.spec_from_file_location("etlqg", path)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


def main():
    etlqg = load()
    prob = etlqg.Problem.boeing747()
    assert (prob.n, prob.m, prob.horizon) == (4, 2, 50), prob
    assert abs(prob.lam - 100.0) < 1e-12

    again = etlqg.Problem.from_json(prob.to_json())
    assert again.to_json() == prob.to_json()
    bad = json.loads(prob.to_json())
    bad["p"] = 1.5
    try:
        etlqg.Problem.from_json(json.dumps(bad))
        raise AssertionError("p=1.5 accepted")
    except ValueError:
        pass

    ric = etlqg.solve_riccati(prob)
    assert ric.constant_cost > 0
    assert ric.matrix("P", 50) == json.loads(prob.to_json())["Q_T"]

    small = prob.with_horizon(8)
    ric8 = etlqg.solve_riccati(small)
    win = etlqg.window(small, ric8, 0, [1.0, -0.5, 0.3, 0.2])
    bnb = win.solve_bnb()
    enum = win.solve_enumerate()
    assert abs(bnb["cost"] - enum["cost"]) <= 1e-10 * enum["cost"]
    best = min(win.cost(list(t)) for t in itertools.product([False, True], repeat=8))
    assert abs(best - enum["cost"]) <= 1e-12 * best
    theta = enum["schedule"]
    assert abs(win.milp_cost(theta) - win.cost(theta)) <= 1e-12 * win.cost(theta)
    assert "Minimize" in win.export_lp()
    rb = win.ratio_bounds()
    assert rb["lower"] - 1e-9 <= rb["ratio"] <= rb["upper"] + 1e-9

    cert = etlqg.certify(prob, ric, 0, [0.0] * 4)
    assert cert["decision"] == "skip"

    run = etlqg.simulate_run(prob, "mpc", 1)
    assert run["attempts"] == sum(run["theta"])
    assert run["trace_csv"] == etlqg.simulate_run(prob, "mpc", 1)["trace_csv"]

    mpc = etlqg.monte_carlo(prob, "mpc", 10)
    one = etlqg.monte_carlo(prob, "oneshot", 10)
    assert mpc["mean_attempts"] < one["mean_attempts"]
    print(
        f"ok: window cost {enum['cost']:.4f}, "
        f"10-seed totals mpc {mpc['mean_total']:.1f} oneshot {one['mean_total']:.1f}"
    )


if __name__ == "__main__":
    main()
