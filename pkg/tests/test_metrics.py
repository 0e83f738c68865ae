import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blockspot.blockgen import TextInstance
from blockspot.metrics import (
    InvalidThreshold,
    MatchPair,
    SpottingResult,
    edit_distance,
    evaluate,
    generalized_f,
    gf_counts,
    image_groups,
    merge_matches,
    normalize_text,
    normalized_score,
    pair_match,
    word_f_measure,
)
from fixtures import rect, three_word_sign
from oracles import recursive_edit_distance

ALPHA = "ABC"


# --- edit distance -----------------------------------------------------------

def test_edit_distance_cases():
    assert edit_distance("KONG", "LONG") == 1
    assert edit_distance("", "abc") == 3
    assert edit_distance("abc", "") == 3
    assert edit_distance("kitten", "sitting") == 3


def test_edit_distance_matches_recursive_definition():
    rng = np.random.default_rng(0)
    for _ in range(500):
        a = "".join(rng.choice(list(ALPHA), size=int(rng.integers(0, 9))))
        b = "".join(rng.choice(list(ALPHA), size=int(rng.integers(0, 9))))
        assert edit_distance(a, b) == recursive_edit_distance(a, b)


words = st.text(alphabet=ALPHA, max_size=8)


@settings(max_examples=200, deadline=None)
@given(words, words, words)
def test_edit_distance_is_a_metric(a, b, c):
    assert edit_distance(a, b) == edit_distance(b, a)
    assert (edit_distance(a, b) == 0) == (a == b)
    assert edit_distance(a, c) <= edit_distance(a, b) + edit_distance(b, c)


def test_normalize_text():
    assert normalize_text("  hello!! ") == "HELLO"
    assert normalize_text("(o'neil)") == "O'NEIL"
    assert normalize_text("Straße") == "STRASSE"
    assert normalize_text("--", True) == ""
    assert normalize_text("abc!", enabled=False) == "abc!"


# --- pair matching and merging -------------------------------------------------

def _gt(boxes, texts):
    return [TextInstance(b, t) for b, t in zip(boxes, texts)]


def _pred(boxes, texts):
    return [SpottingResult(b, t) for b, t in zip(boxes, texts)]


def test_pair_match_identity():
    boxes = [rect(0, 0, 10, 10), rect(20, 0, 30, 10), rect(0, 20, 10, 30)]
    pairs = pair_match(_gt(boxes, "ABC"), _pred(boxes, "ABC"))
    assert pairs == [MatchPair(0, 0), MatchPair(1, 1), MatchPair(2, 2)]


def test_pair_match_many_to_one():
    gt, pred = three_word_sign()
    assert pair_match(gt, pred) == [MatchPair(0, 0), MatchPair(1, 0), MatchPair(2, 0)]
    groups = merge_matches(pair_match(gt, pred), gt, pred)
    assert len(groups) == 1
    assert groups[0].gt_indices == [0, 1, 2] and groups[0].pred_indices == [0]
    assert groups[0].gt_text == "HONG KONG CITY"


def test_pair_match_disjoint():
    g = _gt([rect(0, 0, 10, 10), rect(20, 0, 30, 10)], "AB")
    p = _pred([rect(100, 100, 110, 110)], "C")
    pairs = pair_match(g, p)
    assert pairs == [MatchPair(0, None), MatchPair(1, None), MatchPair(None, 0)]
    groups = merge_matches(pairs, g, p)
    assert [(x.gt_text, x.pred_text) for x in groups] == [("A", ""), ("B", ""), ("", "C")]


def test_pair_match_tie_broken_by_centroid_distance():
    # both predictions fully contain the ground truth (score 1); the nearer wins
    g = _gt([rect(10, 10, 20, 20)], "A")
    p = _pred([rect(0, 0, 40, 40), rect(8, 8, 24, 24)], ["X", "A"])
    assert MatchPair(0, 1) in pair_match(g, p)


def test_merge_chains_shared_boxes():
    # p0 covers gt0 and most of gt1; p1 only clips the end of gt1
    g = _gt([rect(0, 0, 10, 10), rect(12, 0, 22, 10)], "AB")
    p = _pred([rect(0, 0, 20, 10), rect(18, 0, 40, 10)], ["X", "Y"])
    pairs = pair_match(g, p)
    assert pairs == [MatchPair(0, 0), MatchPair(1, 0), MatchPair(1, 1)]
    groups = merge_matches(pairs, g, p)
    assert len(groups) == 1
    assert groups[0].gt_indices == [0, 1] and groups[0].pred_indices == [0, 1]


# --- NS ------------------------------------------------------------------------

def test_ns_identity_is_one():
    boxes = [rect(0, 0, 10, 10), rect(20, 0, 30, 10)]
    assert normalized_score([(_gt(boxes, ["HI", "THERE"]), _pred(boxes, ["HI", "THERE"]))]) == 1.0


def test_ns_single_substitution():
    b = [rect(0, 0, 50, 10)]
    assert normalized_score([(_gt(b, ["HELLO"]), _pred(b, ["HELL0"]))]) == 0.8


def test_ns_pools_over_groups_and_images():
    gt, pred = three_word_sign("VICTORIA HARBOR FERRY")
    gt = [TextInstance(g.polygon, t) for g, t in zip(gt, ["VICTORIA", "HARBOUR", "FERRY"])]
    other = [(_gt([rect(0, 0, 10, 10)], ["HELLO"]), _pred([rect(0, 0, 10, 10)], ["HELL0"]))]
    joined = "VICTORIA HARBOUR FERRY"
    assert len(joined) == 22
    ed = recursive_edit_distance(joined, "VICTORIA HARBOR FERRY")
    expected = 1 - (ed + 1) / (22 + 5)
    assert normalized_score([(gt, pred)] + other) == pytest.approx(expected, abs=0)


def test_ns_empty_dataset_and_ignored_groups():
    assert normalized_score([]) == 1.0
    g = [TextInstance(rect(0, 0, 10, 10), "", ignore=True)]
    p = _pred([rect(0, 0, 10, 10)], ["JUNK"])
    assert normalized_score([(g, p)]) == 1.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(words.filter(bool), words.filter(bool)), min_size=1, max_size=5))
def test_ns_is_one_iff_every_group_matches(texts):
    boxes = [rect(20 * i, 0, 20 * i + 10, 10) for i in range(len(texts))]
    g = _gt(boxes, [a for a, _ in texts])
    p = _pred(boxes, [b for _, b in texts])
    all_equal = all(x.gt_text == x.pred_text for x in image_groups(g, p))
    assert (normalized_score([(g, p)]) == 1.0) == all_equal


# --- GF ------------------------------------------------------------------------

def test_gf_two_of_three_words():
    gt, pred = three_word_sign()
    p, r, f = generalized_f([(gt, pred)])
    assert (p, r) == (pytest.approx(2 / 3), pytest.approx(2 / 3))
    assert f == pytest.approx(0.667, abs=1e-3)


def test_gf_perfect_and_empty():
    gt, _ = three_word_sign()
    perfect = _pred([g.polygon for g in gt], [g.text for g in gt])
    assert generalized_f([(gt, perfect)]) == (1.0, 1.0, 1.0)
    p, r, f = generalized_f([(gt, [])])
    assert r == 0.0 and f == 0.0


def test_gf_threshold_validation():
    gt, pred = three_word_sign()
    for t in (0.0, 1.0, -0.1, 2.0):
        with pytest.raises(InvalidThreshold):
            generalized_f([(gt, pred)], threshold=t)


def test_gf_token_consumed_once():
    # two GT words "A" under one block reading "A": only one can be credited
    g = _gt([rect(0, 0, 10, 10), rect(12, 0, 22, 10)], ["A", "A"])
    p = _pred([rect(0, 0, 22, 10)], ["A"])
    c = gf_counts(g, p)
    assert (c.correct, c.gt_words, c.pred_tokens) == (1, 2, 1)


def test_gf_prediction_on_ignored_gt_not_counted():
    g = [TextInstance(rect(0, 0, 10, 10), "A"), TextInstance(rect(50, 0, 60, 10), "", ignore=True)]
    p = _pred([rect(0, 0, 10, 10), rect(50, 0, 60, 10)], ["A", "JUNK"])
    c = gf_counts(g, p)
    assert (c.correct, c.gt_words, c.pred_tokens) == (1, 1, 1)


def test_gf_monotone_in_added_correct_words():
    gt, pred = three_word_sign()
    before = generalized_f([(gt, pred)])[1]
    extra_g = gt + [TextInstance(rect(10, 60, 60, 80), "EXIT")]
    extra_p = pred + [SpottingResult(rect(10, 60, 60, 80), "EXIT")]
    assert generalized_f([(extra_g, extra_p)])[1] >= before


def _one_to_one_layout(rng, n):
    g, p = [], []
    for i in range(n):
        x, y = 40.0 * (i % 5), 30.0 * (i // 5)
        w = float(rng.uniform(15, 30))
        text = "".join(rng.choice(list(ALPHA), size=int(rng.integers(1, 5))))
        g.append(TextInstance(rect(x, y, x + w, y + 15), text))
        dx, dy = rng.uniform(-2, 2, size=2)
        read = text if rng.random() < 0.6 else text + "X"
        if rng.random() < 0.85:
            p.append(SpottingResult(rect(x + dx, y + dy, x + w + dx, y + 15 + dy), read))
    return g, p


def test_gf_agrees_with_classical_f_on_one_to_one_layouts():
    rng = np.random.default_rng(3)
    for _ in range(30):
        data = [_one_to_one_layout(rng, int(rng.integers(1, 15))) for _ in range(3)]
        gf = generalized_f(data)
        classic = word_f_measure(data)
        assert gf[2] >= classic[2] - 1e-12
        assert gf == pytest.approx(classic, abs=1e-12)


def test_protocols_invariant_to_order():
    rng = np.random.default_rng(4)
    for _ in range(20):
        g, p = _one_to_one_layout(rng, 10)
        ns, gf = normalized_score([(g, p)]), generalized_f([(g, p)])
        gi, pi = rng.permutation(len(g)), rng.permutation(len(p))
        g2, p2 = [g[i] for i in gi], [p[i] for i in pi]
        assert normalized_score([(g2, p2)]) == ns
        assert generalized_f([(g2, p2)]) == gf


# --- reports -----------------------------------------------------------------

def test_evaluate_report():
    gt, pred = three_word_sign()
    rep = evaluate([(gt, pred)], names=["sign.png"])
    assert rep.gf == pytest.approx(2 / 3)
    assert rep.ns == pytest.approx(1 - 1 / 14)
    obj = json.loads(rep.to_json())
    assert obj["per_image"][0]["image"] == "sign.png"
    assert "not comparable across datasets" in rep.summary()
    only_gf = evaluate([(gt, pred)], protocol="gf")
    assert only_gf.ns is None and only_gf.gf == rep.gf
    with pytest.raises(ValueError):
        evaluate([], protocol="f1")
