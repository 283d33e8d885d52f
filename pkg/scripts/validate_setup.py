"""Smoke test: verify packages import and the fast exact checks pass."""

import math
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent))

PASS = "PASS"
FAIL = "FAIL"
results = []


def check(name, fn):
    try:
        fn()
        results.append((name, PASS, ""))
        print(f"  [{PASS}] {name}")
    except Exception as e:
        results.append((name, FAIL, str(e)))
        print(f"  [{FAIL}] {name}: {e}")


def test_imports():
    import mpmath, numpy, scipy, tqdm  # noqa: F401
    from modules import engine, experiments, oracles, policy  # noqa: F401


def test_network():
    from modules.netmodel import build_ksrs, traffic_intensities, validate_network
    from modules.policy import derive_params
    spec = build_ksrs(derive_params(0.2))
    assert validate_network(spec) == [], validate_network(spec)
    rho1, rho2 = traffic_intensities(spec)
    assert math.isclose(rho1, 1 / 1.2) and math.isclose(rho2, 1 / 1.2)


def test_telescoping():
    from modules.policy import derive_params, log_psi_star, psi_seq
    for delta in (0.1, 0.2, 1e-4):
        params = derive_params(delta)
        base = log_psi_star(1.0, params)
        product = 1.0
        for k in range(1, 10**4 + 1):
            closed = math.exp(base - log_psi_star(float(k), params))
            assert abs(product - closed) / closed <= 1e-10, f"delta={delta}, k={k}"
            product *= psi_seq(k, params)


def test_parameter_gate():
    from modules.netmodel import ParameterDomainError
    from modules.policy import derive_params
    assert derive_params(1e-4).eta_condition_holds
    assert not derive_params(2e-4).eta_condition_holds
    assert not derive_params(0.1).eta_condition_holds
    try:
        derive_params(0.6)
    except ParameterDomainError:
        return
    raise AssertionError("delta=0.6 was accepted")


def test_cascade_bound():
    from modules.oracles import cascade_bound, cascade_bound_direct, telescoped_gap
    from modules.policy import derive_params
    params = derive_params(0.1)
    for n in (1, 2):
        fast = cascade_bound(n, 1.0, params).log_bound
        direct = cascade_bound_direct(n, 1.0, params)
        assert abs(fast - direct) <= 1e-10 * abs(direct), f"n={n}: {fast} vs {direct}"
    for n in range(1, 21):
        assert telescoped_gap(n, params) > 0, f"n={n}"
        assert telescoped_gap(n, params, direct=True) > 0, f"n={n} (direct)"


def main():
    print("\nKSRS lab - Setup Validation\n" + "=" * 40)

    print("\n1. Python packages:")
    check("Import all packages", test_imports)

    print("\n2. Network model:")
    check("KSRS spec validates with rho = 1/mu", test_network)

    print("\n3. Policy arithmetic:")
    check("Telescoping product to 1e-10 for k <= 1e4", test_telescoping)
    check("Parameter gate at delta = 1e-4, 2e-4, 0.1, 0.6", test_parameter_gate)

    print("\n4. Cascade bound:")
    check("Log-space bound matches mpmath; telescoped inequality n <= 20", test_cascade_bound)

    print("\n" + "=" * 40)
    passed = sum(1 for _, s, _ in results if s == PASS)
    total = len(results)
    print(f"Results: {passed}/{total} passed")

    if passed < total:
        print("\nFailed checks:")
        for name, status, err in results:
            if status == FAIL:
                print(f"  - {name}: {err}")
        sys.exit(1)
    else:
        print("\nAll checks passed! Ready to run: python app.py params")


if __name__ == "__main__":
    main()
