import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import loop_nest_macs
from prunebench import flops, pruner, zoo
from prunebench.graph import GraphError, LayerSpec as L, ModelGraph


def test_single_conv_formula():
    m = ModelGraph("c", (3, 8, 8), 8, [L("conv", "conv2d", ("input",), 3, 8, 3, 1, 1)])
    assert flops.count(m).total == 8 * 8 * 8 * 3 * 3 * 3 == 13_824


def test_two_x_convention_doubles():
    m = zoo.build_tiny(seed=None)
    a, b = flops.count(m), flops.count(m, convention="2xMAC")
    assert b.total == 2 * a.total
    assert a.to_convention("2xMAC").total == b.total
    with pytest.raises(ValueError):
        flops.count(m, convention="FLOP")


def test_speedup_identity_and_mismatch():
    r = flops.count(zoo.build_tiny(seed=None))
    assert flops.speedup(r, r) == 1.0
    with pytest.raises(ValueError):
        flops.speedup(r, r.to_convention("2xMAC"))


def test_unresolvable_shape_names_layer():
    layers = [L("conv", "conv2d", ("input",), 3, 4, 5, 1, 0)]
    with pytest.raises(GraphError) as e:
        flops.count(ModelGraph("c", (3, 3, 3), 4, layers))
    assert e.value.layer == "conv"


def test_totals_are_sums_of_rows():
    r = flops.count(zoo.build("resnet20", seed=None))
    assert r.total == sum(m for _, m, _ in r.rows())
    assert r.total_params == sum(p for _, _, p in r.rows())
    assert "total" in r.table()


@st.composite
def three_layer_nets(draw):
    c0 = draw(st.integers(1, 4))
    c1 = draw(st.integers(1, 6))
    c2 = draw(st.integers(1, 6))
    size = draw(st.integers(4, 9))
    k1 = draw(st.sampled_from([1, 3]))
    s2 = draw(st.integers(1, 2))
    layers = [L("c1", "conv2d", ("input",), c0, c1, k1, 1, k1 // 2),
              L("r1", "relu", ("c1",)),
              L("c2", "conv2d", ("r1",), c1, c2, 3, s2, 1),
              L("f", "flatten", ("c2",))]
    ho = (size + 2 - 3) // s2 + 1
    layers.append(L("fc", "linear", ("f",), c2 * ho * ho, 3))
    return ModelGraph("rand", (c0, size, size), 3, layers)


@settings(max_examples=40, deadline=None)
@given(three_layer_nets())
def test_random_three_layer_net_matches_loop_nest(m):
    assert flops.count(m).total == loop_nest_macs(m, m.input_shape)


def test_uniform_ratio_on_plain_chain_closed_form():
    m = zoo.build_vgg_cifar([16, 32, "M", 32], num_classes=10, input_size=8, seed=None)
    r = 0.5
    pruned = pruner.rebuild_small_dense(m, pruner.plan(m, pruner.PruneConfig(r)))
    dense, small = flops.count(m).macs, flops.count(pruned).macs
    k = lambda c: pruner.kept_count(c, r)
    # conv1 is spared but feeds a pruned conv only through its output; conv2 loses outputs,
    # conv3 loses both its inputs and outputs, fc loses inputs
    assert small["conv1"] == dense["conv1"]
    assert small["conv2"] * 32 == dense["conv2"] * k(32)
    assert small["conv3"] * 32 * 32 == dense["conv3"] * k(32) * k(32)
    assert small["fc"] * 32 == dense["fc"] * k(32)


@settings(max_examples=30, deadline=None)
@given(st.data())
def test_removing_filters_never_increases_cost(data):
    m = zoo.build_resnet_cifar(8, input_size=8, width=8, seed=None)
    convs = [l for l in m.layers if l.prunable]
    filters = {}
    for l in convs:
        k = data.draw(st.integers(1, l.out_channels))
        filters[l.name] = np.arange(k)
    small = pruner.rebuild_small_dense(m, pruner.propagate(m, filters))
    # drop one more filter somewhere
    victim = data.draw(st.sampled_from(convs))
    if filters[victim.name].size > 1:
        filters[victim.name] = filters[victim.name][:-1]
    smaller = pruner.rebuild_small_dense(m, pruner.propagate(m, filters))
    a, b, c = (flops.count(g) for g in (m, small, smaller))
    assert c.total <= b.total <= a.total
    assert c.total_params <= b.total_params <= a.total_params
