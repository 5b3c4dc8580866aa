"""Smoke test for the compiled `qut` extension module."""

import math
import random

import qut


def gaussian_data(n, p, beta, seed):
    rng = random.Random(seed)
    x = [[rng.gauss(0.0, 1.0) for _ in range(p)] for _ in range(n)]
    y = [1.0 + sum(b * v for b, v in zip(beta, row)) + rng.gauss(0.0, 1.0) for row in x]
    return x, y


def main():
    x, y = gaussian_data(60, 20, [3.0, 0.0, -2.0], seed=1)

    lam0 = qut.lambda0(x, y)
    above = qut.lasso_fit(x, y, lam0 * 1.001)
    below = qut.lasso_fit(x, y, lam0 * 0.999)
    assert all(b == 0.0 for b in above["beta"])
    assert any(b != 0.0 for b in below["beta"])

    t = qut.compute_qut(x, sigma=1.0, mc_samples=500, seed=3)
    assert t == qut.compute_qut(x, sigma=1.0, mc_samples=500, seed=3)
    assert t["lambda_qut"] > 0.0 and t["infinite_fraction"] == 0.0

    report = qut.fit(x, y, sigma=1.0, mc_samples=500)
    assert report["penalized"]["support"][:1] == [0], report["penalized"]["support"]
    assert {0, 2} <= set(report["refit"]["support"])

    lam, _ = qut.closed_form_qut("best-subset", 1.0, 1024)
    assert abs(lam - math.log(1024)) < 1e-12

    assert qut.tv1d([0.0, 2.0], 1.0) == [1.0, 1.0]
    assert qut.svd_soft_threshold([[5.0, 0.0], [0.0, 2.0]], 3.0) == [[2.0, 0.0], [0.0, 0.0]]
    assert abs(qut.family_mean("binomial", 0.0) - 0.5) < 1e-15
    assert qut.support_of([0.0, 1.0, -2.0]) == [1, 2]

    est = qut.estimate_sigma2(x, y, method="rcv", folds=5)
    assert est["sigma2"] > 0.0

    ones = [1.0] * len(x)
    assert math.isinf(qut.lambda0_glm(x, ones, "binomial"))
    try:
        qut.fit(x, ones, family_name="binomial", mc_samples=100)
    except ValueError as e:
        assert "domain" in str(e)
    else:
        raise AssertionError("expected a domain error")

    metrics = qut.support_metrics([0, 5], [0, 2])
    assert metrics["tpr"] == 0.5 and metrics["fdr"] == 0.5
    print("smoke test passed")


if __name__ == "__main__":
    main()
