import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from titan.audit import (
    AuditConfig,
    SampleSet,
    make_equivalent_inputs,
    make_equivalent_system,
    perturbation_samples,
    uniformity_test,
    view_coordinates,
    view_indistinguishability_test,
)
from titan.errors import DomainError
from titan.graph import generate_graph
from titan.modreal import ModulusContext
from titan.protocol import run_titan
from titan.solver import LinearSystem, direct_lssol, local_update, partition_system


def test_equivalent_inputs_examples():
    assert make_equivalent_inputs([1, 2, 3], {1}, 0, 2, 3, 4) == [1, 2, 3]
    assert make_equivalent_inputs([1, 2, 3], {1}, 0.5, 2, 3, 4) == [1, 1.5, 3.5]
    with pytest.raises(DomainError):
        make_equivalent_inputs([1, 2, 3], {1}, 0.5, 1, 3, 4)
    with pytest.raises(DomainError):
        make_equivalent_inputs([1, 2, 3], {1}, 1.5, 2, 3, 4)
    with pytest.raises(DomainError):
        make_equivalent_inputs([1, 2, 3], set(), 0.5, 2, 2, 4)


@given(st.lists(st.floats(0, 9.99), min_size=3, max_size=8), st.data())
def test_equivalent_inputs_preserve_the_sum_on_grid(x, data):
    m = len(x)
    donor, recipient = data.draw(st.lists(st.integers(2, m), min_size=2, max_size=2, unique=True))
    ctx = ModulusContext.exact(1)
    room = min(ctx.quantize(x[donor - 1]), ctx.quantize(10) - 1 - ctx.quantize(x[recipient - 1]))
    if room < 0:
        return
    delta = data.draw(st.integers(0, room)) / ctx.scale
    xp = make_equivalent_inputs(x, {1}, delta, donor, recipient, 10)
    assert sum(ctx.quantize(v) for v in xp) == sum(ctx.quantize(v) for v in x)
    assert ctx.quantize(xp[0]) == ctx.quantize(x[0])


def test_equivalent_system_move_and_move_back():
    rng = np.random.default_rng(0)
    system = LinearSystem(rng.normal(size=(12, 3)), rng.normal(size=12))
    part = partition_system(system, [3, 3, 3, 3])
    moved = make_equivalent_system(part, {1}, 1, 2, 4)
    assert moved.row_counts == (3, 2, 3, 4)
    back = make_equivalent_system(moved, {1}, 3, 4, 2, position=1)
    for (A1, b1), (A2, b2) in zip(part.blocks, back.blocks):
        assert np.array_equal(A1, A2) and np.array_equal(b1, b2)
    gram = lambda p: sum(local_update(b).gram for b in p.blocks)  # noqa: E731
    assert np.allclose(gram(part), gram(moved), rtol=0, atol=1e-12)
    assert np.allclose(direct_lssol(part.stack()), direct_lssol(moved.stack()))
    with pytest.raises(DomainError):
        make_equivalent_system(part, {2}, 0, 2, 3)
    with pytest.raises(DomainError):
        make_equivalent_system(part, {1}, 5, 2, 3)


def test_uniformity_examples():
    g = generate_graph("ring-plus-chords", 4, seed=1, chords=2)
    t, xt = perturbation_samples(g, 3, 1, 2.0, [0.5, 1.0, 1.5, 0.25], node=2, runs=600, seed=3)
    assert uniformity_test(t).passed
    assert uniformity_test(xt).passed
    assert not uniformity_test(SampleSet("const", np.full(600, 1.0), 8.0)).passed
    with pytest.raises(DomainError):
        uniformity_test(SampleSet("empty", np.array([]), 1.0))
    with pytest.raises(DomainError):
        SampleSet("bad", np.array([2.0]), 1.0)


def test_adversary_recovers_the_sum_and_nothing_pins_single_inputs():
    g = generate_graph("ring", 5)
    x = [1, 2, 3, 4, 5]
    for seed in range(5):
        res = run_titan(x, g, 4, 1, 10, seed=seed, corrupted={1}, record_internal=False)
        coords = view_coordinates(res, g)
        assert coords["sum[0]"] == res.ctx.encode(15)
        assert coords["component[2,3,4,5][0]"] == res.ctx.encode(14)
        assert {"r[1->2][0]", "r[5->1][0]", "xt[3][0]"} <= set(coords)


def test_star_hub_reconstructs_inputs():
    g = generate_graph("star", 4)
    res = run_titan([1, 2, 3, 0.5], g, 2, 1, 4, corrupted={1}, record_internal=False)
    coords = view_coordinates(res, g)
    assert [coords[f"component[{i}][0]"] for i in (2, 3, 4)] == [res.ctx.encode(v) for v in (2, 3, 0.5)]


def test_audit_rejects_mismatched_corrupted_inputs():
    conf = AuditConfig(generate_graph("ring", 3), 2, 1, 4, frozenset({1}))
    with pytest.raises(DomainError):
        view_indistinguishability_test(conf, [1, 2, 3], [2, 1, 3], runs=10)


def test_report_json_round_trip():
    rep = uniformity_test(SampleSet("u", np.linspace(0, 0.999, 600), 1.0))
    doc = rep.to_json()
    assert doc["passed"] is rep.passed and doc["sample_sizes"] == [600]


@pytest.mark.slow
def test_audit_calibration():
    """False-alarm rate over repeated true-null audits stays near alpha."""
    g = generate_graph("ring", 5)
    conf = AuditConfig(g, 4, 1, 10.0, frozenset({1}))
    x = [1.0, 2.0, 3.0, 4.0, 5.0]
    xp = make_equivalent_inputs(x, {1}, 0.5, 2, 3, 10.0)
    alpha = 0.05
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fails = sum(
            not view_indistinguishability_test(conf, x, xp, runs=150, alpha=alpha, seed=s).passed for s in range(40)
        )
    # Bonferroni is conservative, so the rate should sit at or below alpha; 2*alpha plus slack for 40 trials
    assert fails / 40 <= 2 * alpha + 0.05
