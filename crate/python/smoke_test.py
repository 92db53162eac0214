"""Smoke test for the Python bindings.

Build and install first:
    cd crates/python && maturin build --release -o dist && pip install dist/*.whl
"""
import json
import math

import pushedfront_py as pf


def main():
    zero = pf.SpectralData("zero", 10.0)
    for k, lam in enumerate(zero.eigenvalues()[:5], start=1):
        assert abs(lam + k * k * math.pi ** 2 / 200) < 1e-8, (k, lam)
    assert zero.regime == "pulled"

    sd = pf.SpectralData("step:10", 5.0)
    assert sd.regime == "fully_pushed", sd.regime
    assert abs(sd.lambda_inf - 2.312097043165057) < 1e-9
    m = sd.mass(2.0, 1.5)
    assert m > 0
    total = sum(sd.spine_kernel(1.0, 2.0, 0.0025 + 0.005 * i) * 0.005 for i in range(1000))
    assert abs(total - 1.0) < 1e-3, total

    big = pf.SpectralData.for_population("step:10", 100.0)
    lhs, rhs, err = big.kolmogorov_check(100.0, 1.0, 2.0)
    assert err < 0.2, (lhs, rhs)

    assert abs(pf.pair_depth_cdf(0.5, 1.0) - (4 * math.log(2) - 2)) < 1e-14
    draws = pf.sample_genealogy(2, 1.0, 20000, 7)
    frac = sum(d[0] <= 0.5 for d in draws) / len(draws)
    assert abs(frac - (4 * math.log(2) - 2)) < 4 * math.sqrt(0.18 / len(draws)), frac
    assert abs(pf.cpp_moment_constant(2, 1.5, [0.5, 0.5]) - 2 * 1.5 ** 2 * 0.25) < 1e-12

    cfg = {
        "potential": {"shape": {"kind": "step", "height": 10.0}},
        "mu": sd.mu,
        "horizon": 1.0,
        "cutoff": 5.0,
        "x0": 1.5,
        "seed": 3,
    }
    alive = pf.simulate_alive(json.dumps(cfg))
    assert all(0 < x < 5 for x in alive)

    small = {
        "name": "py-smoke",
        "n": 20,
        "replicas": 200,
        "checks": ["kolmogorov"],
        "kolmogorov": {"n_list": [20], "monte_carlo": False, "grid_check": False},
    }
    passed, report = pf.run_experiment(json.dumps(small))
    rows = json.loads(report)["kolmogorov"]["rows"]
    assert rows[0]["n"] == 20.0 and rows[0]["fkpp"] > 0
    try:
        pf.run_experiment(json.dumps({"bogus": 1}))
        raise AssertionError("unknown key accepted")
    except ValueError:
        pass
    print("python smoke test passed")


if __name__ == "__main__":
    main()
