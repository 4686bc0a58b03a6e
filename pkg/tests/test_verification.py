import numpy as np
import pytest

from sptlab.generating_functions import GeneratingFunction, make_entropy
from sptlab.verification import (
    VerifyConfig,
    check_derivative_suite,
    check_multiplicative_invariance,
    check_numeraire,
    run_suite,
)


def test_default_suite_passes():
    rep = run_suite(VerifyConfig(paths=6, horizon=0.5))
    assert rep.passed, [c for c in rep.failures]
    names = {c.name for c in rep.checks}
    assert {"entropy_bound", "tau_psd_kernel", "multiplicative_invariance", "numeraire_invariance"} <= names
    assert any(n.startswith("drift_monotonicity") for n in names)
    assert rep.to_dict()["passed"] is True


def test_broken_hessian_is_caught():
    good = make_entropy(1.0)
    broken = GeneratingFunction(
        "broken", good.value_fn, good.grad_fn, lambda x, y: 2.0 * good.hess_fn(x, y), k=0, concave_in_x=True
    )
    (check,) = check_derivative_suite([broken], 4, seed=1)
    assert not check.passed and check.margin < 0


def test_multiplicative_invariance_check():
    c = check_multiplicative_invariance(5, 50, seed=2)
    assert c.passed and c.margin > 0


def test_numeraire_check():
    assert check_numeraire(100, seed=3).passed


def test_config_validation():
    with pytest.raises(ValueError):
        VerifyConfig(n=1)
    with pytest.raises(ValueError):
        VerifyConfig(paths=0)
    assert VerifyConfig(dt=1e-4).tol == pytest.approx(0.1)
