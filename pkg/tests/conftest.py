import numpy as np
import pytest

from geosched import bundled, load_scenario
from geosched.fixtures import random_small, simple_scenario
from geosched.scenario import scenario_to_dict


@pytest.fixture(scope="session")
def four_dc():
    return load_scenario(bundled("four_dc"))


@pytest.fixture
def simple():
    return simple_scenario(2, 2, car=[15.0, 30.0])


@pytest.fixture
def small():
    return random_small(3)


@pytest.fixture
def simple_doc():
    return scenario_to_dict(simple_scenario(2, 1))


def random_profile(scenario, tau, rng):
    """A random feasible rate matrix built by projection of random fractions."""
    from geosched.game import project_batch

    raw = rng.random((scenario.n_tasks, scenario.n_dcs)) + 1e-9
    return project_batch(raw, scenario.car(tau), scenario.execution_rates)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def numeric_grad(f, params, h=1e-5):
    """Central finite differences of scalar ``f(params)`` for every array entry."""
    grads = {}
    for k, arr in params.arrays.items():
        g = np.zeros_like(arr)
        for j in np.ndindex(arr.shape):
            old = arr[j]
            arr[j] = old + h
            up = f(params)
            arr[j] = old - h
            down = f(params)
            arr[j] = old
            g[j] = (up - down) / (2 * h)
        grads[k] = g
    return grads


def max_rel_error(analytic, numeric, floor=1e-8):
    worst = 0.0
    for k in numeric:
        a, n = analytic[k], numeric[k]
        err = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(err.max()))
    return worst


def gradcheck_point(seed, n_state=6, n_action=3, hidden=(8, 8), batch=16, h=1e-5, floor=1e-8):
    """Relative errors of the policy and value loss gradients at one random parameter point."""
    from geosched.drl import (
        PpoConfig,
        gaussian_log_prob,
        init_policy,
        init_value,
        mlp_forward,
        policy_loss_and_grad,
        value_loss_and_grad,
    )

    rng = np.random.default_rng(seed)
    cfg = PpoConfig(hidden=hidden, entropy_coef=0.01)
    pol = init_policy(n_state, n_action, cfg, rng)
    val = init_value(n_state, cfg, rng)
    # move off the zero-initialized output layer so every path carries gradient
    for p in (pol, val):
        for k, a in p.arrays.items():
            a += 0.3 * rng.standard_normal(a.shape)
    states = rng.standard_normal((batch, n_state))
    mean, _ = mlp_forward(pol, states)
    actions = mean + np.exp(pol.log_std) * rng.standard_normal(mean.shape)
    logp = gaussian_log_prob(actions, mean, pol.log_std)
    # old log-probs keep every ratio well inside or well outside the clip band
    shift = rng.choice([-0.5, -0.05, 0.05, 0.5], size=batch)
    old = logp + shift
    adv = rng.standard_normal(batch)
    returns = rng.standard_normal(batch)

    _, p_grad, _ = policy_loss_and_grad(pol, states, actions, old, adv, cfg)
    p_num = numeric_grad(lambda p: policy_loss_and_grad(p, states, actions, old, adv, cfg)[0], pol, h)
    _, v_grad = value_loss_and_grad(val, states, returns, cfg)
    v_num = numeric_grad(lambda p: value_loss_and_grad(p, states, returns, cfg)[0], val, h)
    return max_rel_error(p_grad, p_num, floor), max_rel_error(v_grad, v_num, floor)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
