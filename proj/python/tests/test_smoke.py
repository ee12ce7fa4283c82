import math

import numpy as np
import pytest

import fcam


def test_kalman_one_step():
    f = fcam.kalman_forward([1.2], [1.0], b=0.0, gamma=0.5, sigma2=0.1, tau2=0.2, C0=1.0)
    assert f["R"][1] == pytest.approx(0.45)
    assert f["m"][1] == pytest.approx(1.1636363636363636)
    assert f["C"][1] == pytest.approx(0.0818181818181818)


def test_bnb_and_ari():
    assert fcam.bnb_log_pmf(0) == pytest.approx(math.log(4 / 7))
    assert fcam.adjusted_rand_index([1, 1, 2, 2], [1, 1, 2, 2]) == 1.0
    assert fcam.adjusted_rand_index([1, 1, 1, 1], [1, 1, 2, 2]) == pytest.approx(0.0)
    assert fcam.misclassification_rate([True, False], [True, True]) == 0.5


def test_trace_validation():
    tr = fcam.Trace([0.1, 0.2, 0.3], ["A", "A", "B"])
    assert tr.J == 2
    assert list(tr.g) == [0, 0, 1]
    with pytest.raises(fcam.ValidationError, match="non-finite"):
        fcam.Trace([0.1, float("nan")], ["A", "A"])


def test_simulate_fit_summarize(tmp_path):
    sim = fcam.simulate(2, seed=3, T_per_condition=150)
    trace = sim["trace"]
    assert len(trace) == 600
    assert np.array_equal(sim["spike_true"], sim["A_true"] > 0)

    draws = fcam.fit(trace, iters=120, burnin=60, thin=2, seed=5, options={"hA1": 3, "hA2": 3})
    assert len(draws) == 30
    amps = draws.amplitudes()
    assert amps.shape == (30, 600)
    assert np.all((amps == 0) | (amps >= 1e-12))
    again = fcam.fit(trace, iters=120, burnin=60, thin=2, seed=5, options={"hA1": 3, "hA2": 3})
    assert draws == again

    path = tmp_path / "chain.fcd"
    draws.save(str(path))
    assert fcam.Draws.load(str(path)) == draws

    s = fcam.summarize(draws, trace)
    assert len(s["spike_calls"]) == 600
    assert np.array_equal(s["spike_calls"], s["spike_prob"] > 0.6)
    assert set(s["firing_rates"]) == set(trace.labels)
    assert 0 < s["parameters"]["gamma"]["mean"] < 1


def test_fit_rejects_bad_options():
    sim = fcam.simulate(1, seed=1, T_per_condition=20)
    with pytest.raises(fcam.ValidationError):
        fcam.fit(sim["trace"], iters=10, burnin=10)
    with pytest.raises(fcam.ValidationError, match="unknown config key"):
        fcam.fit(sim["trace"], iters=10, burnin=5, options={"nope": 1})
