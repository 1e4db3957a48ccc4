"""Smoke test for the penbar_py extension module.

Build and install it first:
    pip install --no-build-isolation -e crates/python
then run `python3 python/smoke_test.py`.
"""

import math
import sys

import penbar_py as pb


def close(a, b, tol=1e-12):
    return abs(a - b) <= tol * max(1.0, abs(b))


def main():
    # Inverse barrier: b(t) = -1/t, b'(t) = 1/t^2, b*(tau) = -2 sqrt(tau).
    b, db, _ = pb.barrier_eval("inverse", -2.0)
    assert close(b, 0.5) and close(db, 0.25), (b, db)
    assert math.isinf(pb.barrier_eval("loglike", 0.5)[0])
    conj, _ = pb.conjugate_eval("inverse", 1.0)
    assert close(conj, -2.0), conj

    # One-sided penalty slope is b'(t) below the breakpoint and rho* above it.
    _, d = pb.penalty_eval("inverse", 1.0, -2.0, upper=0.0)
    assert close(d, 0.25), d
    _, d = pb.penalty_eval("inverse", 1.0, 3.0, upper=0.0)
    assert close(d, 1.0), d
    _, d = pb.penalty_eval("loglike", 10.0, 0.0, lower=-1.0, upper=1.0)
    assert abs(d) < 1e-12, d

    try:
        pb.barrier_eval("bogus", -1.0)
    except ValueError as e:
        assert "loglike" in str(e)
    else:
        raise AssertionError("unknown barrier accepted")

    rec = pb.solve(family="degenerate", seed=3, eps_p=1e-7, eps_d=1e-7)
    assert rec["exit"]["status"] == "converged" and rec["kkt_pass"]
    assert rec["exit"]["alpha"] > 1.0
    assert max(abs(v) for v in rec["exit"]["x"]) <= 1e-3

    rec = pb.solve(family="nonneg_pca", n=10, seed=1, barrier="inverse", inner="spectral")
    assert rec["exit"]["status"] == "converged" and rec["kkt_pass"]
    assert abs(sum(v * v for v in rec["exit"]["x"]) - 1.0) < 1e-9

    try:
        pb.solve(family="degenerate", colour="red")
    except KeyError as e:
        assert "eps_p" in str(e)
    else:
        raise AssertionError("unknown option accepted")

    checks = pb.self_check()
    failed = [name for name, _, failures in checks if failures]
    assert not failed, failed

    print(f"penbar_py {pb.__version__}: smoke test passed ({len(checks)} self-checks)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
