import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import random_curve
from oracles import trainability_oracle, two_pass_std
from prunebench.metrics import AccuracyCurve, Summary, aggregate, mean_std, trainability_accuracy
from prunebench.planner import synthesize_cosine_schedule, synthesize_step_schedule


def test_trainability_step_example():
    s = synthesize_step_schedule(6, 1e-1, 1e-2)      # stages of 3 and 3 epochs
    c = AccuracyCurve([10, 20, 30, 90, 90, 90], s)
    assert trainability_accuracy(c) == 20.0


def test_trainability_cosine_uses_leading_high_lr_epochs():
    s = synthesize_cosine_schedule(60, 1e-2, 1e-5)
    accs = list(np.linspace(10, 80, 60))
    assert trainability_accuracy(AccuracyCurve(accs, s)) == pytest.approx(np.mean(accs[:48]))


def test_curve_validation():
    s = synthesize_step_schedule(4, 1e-1, 1e-2)
    with pytest.raises(ValueError):
        AccuracyCurve([1, 2, 3], s)
    with pytest.raises(ValueError):
        AccuracyCurve([1, 2, 3, 101], s)


def test_mean_std_examples():
    m, s = mean_std([79.42, 79.57, 79.72])
    assert m == pytest.approx(79.57) and s == pytest.approx(0.15)
    assert Summary.fmt(m, s, 3) == "79.57±0.15 (n=3)"
    assert mean_std([5.0]) == (5.0, 0.0)
    assert Summary.fmt(5.0, 0.0, 1) == "5.00±0.00 (n=1, no spread)"
    with pytest.raises(ValueError):
        mean_std([])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 100), min_size=1, max_size=12))
def test_mean_std_matches_two_pass(values):
    m, s = mean_std(values)
    om, os_ = two_pass_std(values)
    assert m == pytest.approx(om, abs=1e-9)
    assert s == pytest.approx(os_, abs=1e-7)


class _Run:
    def __init__(self, h, f, t):
        self.manifest_hash, self.final_acc, self.trainability = h, f, t


def test_aggregate():
    s = aggregate([_Run("a", 70, 60), _Run("a", 72, 62)])
    assert (s.n, s.final_mean, s.t_mean) == (2, 71, 61)
    assert s.final.endswith("(n=2)")
    with pytest.raises(ValueError):
        aggregate([_Run("a", 70, 60), _Run("b", 72, 62)])
    with pytest.raises(ValueError):
        aggregate([])


def test_trainability_matches_oracle_on_random_curves():
    rng = np.random.default_rng(0)
    for _ in range(200):
        c = random_curve(rng)
        n = c.schedule.first_stage_length
        assert trainability_accuracy(c) == pytest.approx(trainability_oracle(c.accuracies, n),
                                                         rel=1e-12)


def test_tail_does_not_matter():
    rng = np.random.default_rng(1)
    for _ in range(100):
        c = random_curve(rng)
        n = c.schedule.first_stage_length
        tail = rng.uniform(0, 100, len(c.accuracies) - n)
        d = AccuracyCurve(tuple(c.accuracies[:n]) + tuple(tail), c.schedule)
        assert trainability_accuracy(d) == trainability_accuracy(c)
