import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from arprotect.fuzzy import (
    FAULT, NO_FAULT, AdaptiveFuzzy, AdaptiveState, FuzzyError, FuzzySystem, FuzzyTemplate, FuzzyVariable,
    GaConfig, Rule, Trapezoid, adaptive_check, decide, decide_batch, decode, dumps_system, encode, ga_run,
    infer, infer_batch, loads_system,
)

RAMP = FuzzyVariable("x", 0.0, 1.0, ("low", "high"), (Trapezoid(0, 0, 0, 1), Trapezoid(0, 1, 1, 1)))


def single(out_sets, rules, inp=RAMP, check=True):
    labels = tuple(out_sets)
    out = FuzzyVariable("y", 0.0, 1.0, labels, tuple(Trapezoid(*p) for p in out_sets.values()))
    return FuzzySystem((inp,), out, tuple(Rule((a,), c) for a, c in rules), check)


def three_label():
    inp = FuzzyVariable("x", 0.0, 1.0, ("low", "medium", "high"),
                        (Trapezoid(0, 0, 0.2, 0.4), Trapezoid(0.2, 0.4, 0.6, 0.8), Trapezoid(0.6, 0.8, 1, 1)))
    out = {NO_FAULT: (0, 0, 0.3, 0.5), FAULT: (0.5, 0.7, 1, 1)}
    return single(out, [("low", NO_FAULT), ("medium", NO_FAULT), ("high", FAULT)], inp)


# ---------------------------------------------------------------- inference

def test_full_strength_symmetric_set_centroid():
    sys = single({"o": (0.6, 0.7, 0.9, 1.0)}, [("high", "o")])
    score, none = infer(sys, [1.0])
    assert score == pytest.approx(0.8, abs=1e-12) and not none


def test_symmetric_pair_centroid_half():
    sys = single({NO_FAULT: (0, 0, 0.2, 0.4), FAULT: (0.6, 0.8, 1, 1)}, [("low", NO_FAULT), ("high", FAULT)])
    assert infer(sys, [0.5])[0] == pytest.approx(0.5, abs=1e-12)


def test_no_rule_fired_scores_half():
    gap = FuzzyVariable("x", 0.0, 1.0, ("low", "high"), (Trapezoid(0, 0, 0.1, 0.2), Trapezoid(0.8, 0.9, 1, 1)))
    sys = single({FAULT: (0.5, 0.7, 1, 1)}, [("high", FAULT)], gap, check=False)
    score, none = infer(sys, [0.5])
    assert score == 0.5 and none
    # the decision threshold is inclusive
    assert decide_batch(sys, [[0.5]])[0]


def test_clipped_trapezoid_centroid():
    sys = single({"o": (0.1, 0.5, 0.6, 0.7)}, [("high", "o")])
    score, _ = infer(sys, [0.6])
    assert score == pytest.approx(oracles.mamdani_centroid([0.6], [(0.1, 0.5, 0.6, 0.7)]), rel=1e-12)
    assert score == pytest.approx(oracles.clipped_trapezoid_centroid(0.1, 0.5, 0.6, 0.7, 0.6), abs=1e-3)
    assert score == pytest.approx(0.44, abs=1e-3)


def test_coverage_enforced():
    gap = FuzzyVariable("x", 0.0, 1.0, ("low", "high"), (Trapezoid(0, 0, 0.1, 0.2), Trapezoid(0.8, 0.9, 1, 1)))
    with pytest.raises(FuzzyError):
        single({FAULT: (0.5, 0.7, 1, 1)}, [("high", FAULT)], gap)


def test_structure_validation():
    with pytest.raises(FuzzyError):
        Trapezoid(0.5, 0.2, 0.6, 0.7)
    with pytest.raises(FuzzyError):
        single({"o": (0, 0, 1, 1)}, [("nope", "o")])
    with pytest.raises(FuzzyError):
        single({"o": (0, 0, 1, 1)}, [])


def test_clamp_warning(caplog):
    sys = three_label()
    with caplog.at_level(logging.WARNING, logger="arprotect.fuzzy"):
        res = infer_batch(sys, [[-3.0], [0.5], [7.0]])
    assert res.clamped == 2 and "clamped 2" in caplog.text
    np.testing.assert_array_equal(res.scores, infer_batch(sys, [[0.0], [0.5], [1.0]]).scores)


def test_batch_matches_oracle():
    sys = three_label()
    xs = np.linspace(0, 1, 11)
    got = infer_batch(sys, xs[:, None]).scores
    sets = [t.params for t in sys.output.sets]
    for x, s in zip(xs, got):
        mu = sys.inputs[0].memberships(x)
        strengths = [max(mu[0], mu[1]), mu[2]]
        assert s == pytest.approx(oracles.mamdani_centroid(strengths, sets), rel=1e-12)


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_score_monotone_and_bounded(a, b):
    # fault strength rises while no-fault strength falls
    sys = single({NO_FAULT: (0, 0, 0.3, 0.5), FAULT: (0.5, 0.7, 1, 1)}, [("low", NO_FAULT), ("high", FAULT)])
    lo, hi = sorted((a, b))
    s = infer_batch(sys, [[lo], [hi]]).scores
    assert 0.0 <= s[0] <= 1.0 and 0.0 <= s[1] <= 1.0
    assert s[0] <= s[1] + 1e-12


def test_decide_per_phase():
    tpl = FuzzyTemplate.per_phase().with_universes([(0.0, 1.0)] * 6)
    genome = np.ones(tpl.genome_size)
    # rule genes: only (high, high) on any phase maps to fault
    rule_genes = genome[-27:]
    rule_genes[:] = 0.1
    for p in range(3):
        rule_genes[9 * p + 8] = 0.9
    sys = decode(genome, tpl)
    assert decide(sys, [0.0, 0.0, 1.0], [0.0, 0.0, 1.0]) == FAULT
    assert decide(sys, [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]) == NO_FAULT


# ---------------------------------------------------------------- text format

def test_text_round_trip():
    sys = three_label()
    back = loads_system(dumps_system(sys))
    assert back == sys
    xs = np.linspace(0, 1, 21)[:, None]
    assert np.array_equal(infer_batch(back, xs).scores, infer_batch(sys, xs).scores)


def test_text_bad_header():
    with pytest.raises(FuzzyError):
        loads_system("hello\n")


# ---------------------------------------------------------------- encoding and GA

def toy(n=200, seed=0):
    x = np.random.default_rng(seed).uniform(0, 1, (n, 1))
    return x, x[:, 0] > 0.5


@given(st.integers(0, 2**32 - 1))
def test_encode_decode_identity(seed):
    tpl = FuzzyTemplate.per_phase().with_universes([(-1.0, 2.0)] * 6)
    g = np.random.default_rng(seed).uniform(0.05, 1.0, tpl.genome_size)
    sys = decode(g, tpl)
    again = decode(encode(sys, tpl), tpl)
    # breakpoints survive to round-off; structure and consequents exactly
    assert [r.consequent for r in again.rules] == [r.consequent for r in sys.rules]
    for va, vb in zip(again.inputs + (again.output,), sys.inputs + (sys.output,)):
        assert va.labels == vb.labels
        np.testing.assert_allclose([t.params for t in va.sets], [t.params for t in vb.sets], atol=1e-12)


def test_decode_requires_universes():
    with pytest.raises(FuzzyError):
        decode(np.ones(FuzzyTemplate.single_input().genome_size), FuzzyTemplate.single_input())


def test_ga_separable_toy():
    x, y = toy()
    res = ga_run(x, y, FuzzyTemplate.single_input(), GaConfig(generations=50, seed=1))
    assert res.fitness == 1.0
    assert np.array_equal(decide_batch(res.system, x), y)


def test_ga_zero_generations():
    x, y = toy()
    res = ga_run(x, y, FuzzyTemplate.single_input(), GaConfig(generations=0, seed=2))
    assert len(res.history) == 1 and res.history[0] == res.fitness


def test_ga_deterministic_and_elitist():
    x, y = toy(seed=3)
    cfg = GaConfig(population=10, generations=8, seed=5)
    a = ga_run(x, y, FuzzyTemplate.single_input(), cfg)
    b = ga_run(x, y, FuzzyTemplate.single_input(), cfg)
    assert a.history == b.history and np.array_equal(a.genome, b.genome)
    assert all(q >= p for p, q in zip(a.history, a.history[1:]))


def test_ga_needs_both_classes():
    x, _ = toy()
    with pytest.raises(FuzzyError):
        ga_run(x, np.ones(len(x), bool), FuzzyTemplate.single_input())
    with pytest.raises(FuzzyError):
        GaConfig(population=3)


# ---------------------------------------------------------------- adaptive trigger

def test_adaptive_first_frame_triggers():
    need, state = adaptive_check(AdaptiveState(), [[0.1, 0.2], [0.3, 0.0]])
    assert need and state.a_min == (0.1, 0.0) and state.a_max == (0.3, 0.2)


def test_adaptive_inside_envelope_quiet():
    _, state = adaptive_check(AdaptiveState(), [[0.0, 0.0], [1.0, 1.0]])
    need, _ = adaptive_check(state, [[0.2, 0.5], [0.8, 0.9]])
    assert not need


@pytest.mark.parametrize("frame", [[[-0.1, 0.5]], [[0.5, 1.1]]])
def test_adaptive_excursion_triggers(frame):
    _, state = adaptive_check(AdaptiveState(), [[0.0, 0.0], [1.0, 1.0]])
    assert adaptive_check(state, frame)[0]


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=12))
def test_adaptive_idempotent(vals):
    frame = np.asarray(vals)[:, None]
    _, s1 = adaptive_check(AdaptiveState(), frame)
    need, s2 = adaptive_check(s1, frame)
    assert not need and s1 == s2


def test_adaptive_state_validation():
    with pytest.raises(FuzzyError):
        AdaptiveState((0.0,), None)
    with pytest.raises(FuzzyError):
        AdaptiveState((1.0,), (0.0,))


def test_adaptive_fuzzy_retunes():
    x, y = toy()
    af = AdaptiveFuzzy(FuzzyTemplate.single_input(), GaConfig(population=10, generations=5))
    assert af.observe(x[:, :1], x, y)
    assert af.system is not None and af.retunes == 1
    assert not af.observe(x[:5], x[:5], y[:5])
