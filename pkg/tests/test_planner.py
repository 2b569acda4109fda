import math
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from oracles import halving_starts
from prunebench import planner
from prunebench.manifest import ExperimentManifest
from prunebench.planner import (BudgetSpec, LRSchedule, SetupLevel, classify_setup, format_lr,
                                scratch_b_epochs, squeeze_prune_epoch, synthesize_cosine_schedule,
                                synthesize_step_schedule)


# ---------------------------------------------------------------- schedules

@pytest.mark.parametrize("args,expected", [
    ((90, 1e-1, 1e-5), "0:1e-1,30:1e-2,60:1e-3,75:1e-4,83:1e-5"),
    ((60, 1e-2, 1e-5), "0:1e-2,30:1e-3,45:1e-4,53:1e-5"),
    ((90, 1e-2, 1e-5), "0:1e-2,30:1e-3,60:1e-4,75:1e-5"),
])
def test_printed_schedules(args, expected):
    assert synthesize_step_schedule(*args).to_string() == expected


@pytest.mark.parametrize("args,expected", [
    ((30, 1e-4, 1e-5), "0:1e-4,15:1e-5"),
    ((120, 1e-1, 1e-5), "0:1e-1,30:1e-2,60:1e-3,90:1e-4,105:1e-5"),
    ((60, 1e-3, 1e-5), "0:1e-3,30:1e-4,45:1e-5"),
    ((30, 1e-2, 1e-5), "0:1e-2,15:1e-3,23:1e-4,27:1e-5"),
    ((1, 1e-2, 1e-2), "0:1e-2"),
    ((4, 1e-1, 1e-4), "0:1e-1,1:1e-2,2:1e-3,3:1e-4"),
])
def test_derived_schedules(args, expected):
    assert synthesize_step_schedule(*args).to_string() == expected


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 400), st.integers(0, 5), st.integers(1, 40))
def test_halving_matches_recursive_oracle(total, decades, cap):
    if total < decades + 1:
        with pytest.raises(ValueError):
            synthesize_step_schedule(total, 10.0 ** -1, 10.0 ** (-1 - decades), cap)
        return
    s = synthesize_step_schedule(total, 1e-1, float(f"1e{-1 - decades}"), cap)
    assert [a for a, _ in s.stages] == halving_starts(total, decades + 1, cap)
    assert sum(s.stage_lengths) == total
    assert all(n >= 1 for n in s.stage_lengths)
    assert all(n <= cap for n in s.stage_lengths[:-1])
    lrs = s.lrs()
    assert len(lrs) == total and all(b <= a for a, b in zip(lrs, lrs[1:]))
    assert lrs[-1] == pytest.approx(float(f"1e{-1 - decades}"))


def test_step_errors():
    with pytest.raises(ValueError):
        synthesize_step_schedule(90, 1e-1, 3e-5)     # not a power of ten apart
    with pytest.raises(ValueError):
        synthesize_step_schedule(90, 1e-5, 1e-1)
    with pytest.raises(ValueError):
        synthesize_step_schedule(3, 1e-1, 1e-5)


def test_format_lr():
    assert format_lr(0.1) == "1e-1"
    assert format_lr(0.05) == "5e-2"
    assert format_lr(0.25) == "2.5e-1"
    assert format_lr(1.0) == "1e0"
    with pytest.raises(ValueError):
        format_lr(0)


def test_non_unit_mantissa_schedule():
    assert synthesize_step_schedule(10, 5e-2, 5e-4).to_string() == "0:5e-2,5:5e-3,8:5e-4"


def test_step_string_round_trip():
    s = synthesize_step_schedule(90, 1e-1, 1e-5)
    back = LRSchedule.parse(s.to_string(), 90, 1e-5)
    assert back == s and back.lrs() == s.lrs()


def test_cosine_formula_and_first_stage():
    s = synthesize_cosine_schedule(60, 1e-2, 1e-5)
    assert s.lr_at(0) == 1e-2
    for e in (1, 17, 30, 59):
        assert s.lr_at(e) == pytest.approx(1e-5 + 0.5 * (1e-2 - 1e-5) * (1 + math.cos(math.pi * e / 60)))
    n = s.first_stage_length
    assert s.lr_at(n - 1) >= 1e-3 > s.lr_at(n)
    assert n == 48
    assert LRSchedule.parse(s.to_string()) == s
    with pytest.raises(ValueError):
        synthesize_cosine_schedule(10, 1e-3, 1e-2)


def test_prefix_and_extension():
    s = synthesize_step_schedule(120, 1e-1, 1e-5)
    p = s.prefix(30)
    assert p.to_string() == "0:1e-1" and p.total_epochs == 30 and p.lrs() == s.lrs()[:30]
    assert s.prefix(0) is None
    assert s.prefix(65).to_string() == "0:1e-1,30:1e-2,60:1e-3"
    ext = synthesize_step_schedule(60, 1e-3, 1e-5).extend_first_stage(180)
    assert ext.to_string() == "0:1e-3,210:1e-4,225:1e-5"
    assert ext.total_epochs == 240 and ext.first_stage_length == 210
    c = synthesize_cosine_schedule(40, 1e-2, 1e-4)
    assert c.prefix(10).lrs() == c.lrs()[:10]
    assert LRSchedule.parse(c.prefix(10).to_string()) == c.prefix(10)
    with pytest.raises(ValueError):
        c.extend_first_stage(5)


def test_lr_at_bounds():
    s = synthesize_step_schedule(10, 1e-1, 1e-2)
    with pytest.raises(IndexError):
        s.lr_at(10)


def test_plan_pxfy():
    scratch = synthesize_step_schedule(120, 1e-1, 1e-5)
    p = planner.plan_pxfy(scratch, 30, 90, 1e-1)
    assert p.label() == "P30F90" and p.total_epochs == 120
    assert p.finetune.to_string() == "0:1e-1,30:1e-2,60:1e-3,75:1e-4,83:1e-5"
    q = planner.plan_pxfy(scratch, 90, 30, 1e-2)
    assert q.finetune.to_string() == "0:1e-2,15:1e-3,23:1e-4,27:1e-5"
    assert planner.plan_pxfy(scratch, 0, 10, 1e-1, final_lr=1e-1).pretrain is None
    with pytest.raises(ValueError):
        planner.plan_pxfy(scratch, 121, 10, 1e-1)
    with pytest.raises(ValueError):
        planner.plan_pxfy(scratch, 30, 0, 1e-1)


# ------------------------------------------------------------------ budgets

def test_squeeze_examples():
    assert squeeze_prune_epoch(30, 1.11) == 27
    assert squeeze_prune_epoch(30, 12.06) == 2
    assert squeeze_prune_epoch(30, 1.0) == 30
    assert squeeze_prune_epoch(1, 50) == 1
    with pytest.raises(ValueError):
        squeeze_prune_epoch(30, 0.5)


def test_scratch_b_example():
    # 90 pretrain epochs at k = 2.31 plus 90 finetune: 207.9 + 90 -> 298
    assert scratch_b_epochs(BudgetSpec(90, 90, 231, 100)) == 298
    assert scratch_b_epochs(BudgetSpec(30, 90, 5, 5)) == 120


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 300), st.integers(0, 300), st.integers(1, 10 ** 9), st.integers(1, 10 ** 9))
def test_scratch_b_formula(k1, k2, f1, f2):
    exact = Fraction(k1 * f1, f2) + k2
    got = scratch_b_epochs(BudgetSpec(k1, k2, f1, f2))
    assert abs(got - exact) <= Fraction(1, 2)
    assert got == int(exact + Fraction(1, 2))


def test_budget_validation():
    with pytest.raises(ValueError):
        BudgetSpec(-1, 0, 1, 1)
    with pytest.raises(ValueError):
        BudgetSpec(1, 0, 0, 1)


# ---------------------------------------------------------- classification

DS = "synthetic:classes=10,train=512,test=128,size=8"


def base_manifest(**kw):
    m = ExperimentManifest(dataset=DS, model="resnet20", scratch_epochs=120, prune_epoch=30,
                           ft_epochs=90, ft_init_lr=0.1, prune_ratio=0.5, base_seed=0)
    return m.replace(**kw) if kw else m


def test_self_comparison():
    m = base_manifest()
    r = classify_setup(m, m)
    assert r.level == SetupLevel.S4_2 and r.sx_a and r.sx_b
    assert str(r) == "S4.2 [SX-A] [SX-B]"


def test_finetune_lr_change_drops_to_s3_1():
    a = base_manifest()
    r = classify_setup(a, a.replace(ft_init_lr=0.01))
    assert r.level == SetupLevel.S3_1 and r.sx_a and r.sx_b


def test_scratch_vs_prune():
    a = base_manifest()
    b = a.replace(pipeline="scratch", scratch_epochs=120)
    assert str(classify_setup(a, b)) == "S1 [SX-A]"


def test_different_dataset_is_incomparable():
    a = base_manifest()
    b = a.replace(dataset="synthetic:classes=10,train=256,test=128,size=8")
    assert str(classify_setup(a, b)) == "incomparable"


def test_speedup_tolerance():
    a = base_manifest()
    assert classify_setup(a, a.replace(prune_ratio=0.9)).level is None
    assert classify_setup(a, a.replace(prune_ratio=0.505)).level is not None


def test_setup_level_names():
    assert [str(l) for l in SetupLevel] == ["S1", "S2", "S3.1", "S3.2", "S4.1", "S4.2"]


def test_speedup_for_static_models():
    d, p = planner.speedup_for("resnet56", 0.5, None, 32, 10)
    assert 1.9 < d / p < 2.1
