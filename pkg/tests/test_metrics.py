import json
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from mixcl.corpus import KnowledgeSnippet
from mixcl.data import DialogueExample
from mixcl.errors import IngestionError
from mixcl.metrics import (
    CATEGORIES,
    HallucinationLabel,
    bleu,
    corpus_bleu,
    entity_f1,
    evaluate,
    knowledge_accuracy,
    knowledge_f1,
    read_labels,
    rouge_l,
    taxonomy_report,
    unigram_f1,
)
from mixcl.spans import ShallowChunker

GOLDEN = json.loads((Path(__file__).parent / "golden" / "bleu_golden.json").read_text())


def test_unigram_f1_examples():
    assert unigram_f1("Hello there!", "hello there") == 1.0
    assert unigram_f1("a b c", "a d") == pytest.approx(0.4, abs=1e-12)
    assert unigram_f1("a b", "c d") == 0.0
    assert unigram_f1("", "a") == 0.0 and unigram_f1("", "") == 0.0


def test_knowledge_f1_examples():
    k = "Thierry Henry was born in Paris."
    assert knowledge_f1(k, k) == 1.0
    assert knowledge_f1("nothing shared", k) == 0.0
    # pred 7 tokens, knowledge 6, overlap {he? no: thierry henry was born} -> 4
    pred = "I think Thierry Henry was born there"
    overlap = 4
    p, r = overlap / 7, overlap / 6
    assert knowledge_f1(pred, k) == pytest.approx(2 * p * r / (p + r), abs=1e-12)


def test_entity_f1_examples():
    assert entity_f1("I love Paris", "He was born in Paris") == 1.0
    assert entity_f1("He was born in Montreal", "He was born in Paris") == 0.0
    assert entity_f1("He was born in Paris in 1847", "He was born in Paris") == pytest.approx(2 / 3, abs=1e-12)
    assert entity_f1("no entities here", "He was born in Paris") == 0.0
    with pytest.raises(ValueError):
        entity_f1("a", "b", ShallowChunker())


def test_bleu_identity_and_brevity():
    assert bleu("the cat sat on the mat", "the cat sat on the mat") == 1.0
    # full precision, c = 4 < r = 6 -> BP = e^(1 - 6/4)
    import math

    got = bleu("the cat sat on", "the cat sat on the mat", 2)
    assert got == pytest.approx(math.exp(1 - 6 / 4), rel=1e-12)


def test_bleu_five_token_hand_expansion():
    import math

    # pred a b c d e vs ref a b c x e: p1 4/5, p2 2/4, p3 1/3, p4 smoothed 1/(2+1)
    expected = math.exp((math.log(4 / 5) + math.log(2 / 4) + math.log(1 / 3) + math.log(1 / 3)) / 4)
    assert bleu("a b c d e", "a b c x e", 4) == pytest.approx(expected, rel=1e-12)


def test_bleu_rejects_order():
    with pytest.raises(ValueError):
        bleu("a", "a", 3)


@pytest.mark.parametrize("case", GOLDEN, ids=lambda c: f"{c['max_n']}:{c['preds'][0][:20]}")
def test_bleu_golden(case):
    value = corpus_bleu(case["preds"], case["refs"], case["max_n"])
    assert value == float.fromhex(case["value"])
    assert value == pytest.approx(float(case["oracle"]), rel=1e-14, abs=1e-300)


def test_rouge_l_examples():
    assert rouge_l("a b c", "a b c") == 1.0
    assert rouge_l("a b c d", "a c d") == pytest.approx(6 / 7, abs=1e-12)
    assert rouge_l("a b", "c d") == 0.0


def test_knowledge_accuracy_examples():
    cands = ["Paris is big.", "Rome is old.", "Oslo is cold."]
    assert knowledge_accuracy("Paris is big.", cands, 0) == 1
    assert knowledge_accuracy("Rome is old.", cands, 0) == 0
    assert knowledge_accuracy("zzz", cands, 0) == 1
    assert knowledge_accuracy("zzz", cands, 2) == 0
    with pytest.raises(ValueError):
        knowledge_accuracy("x", cands, 3)


texts = st.lists(st.sampled_from("paris rome the a cat born in 1847 henry , .".split()), max_size=10).map(" ".join)


@given(texts, texts)
def test_metrics_bounded_and_symmetric(a, b):
    for fn in (unigram_f1, rouge_l, entity_f1, lambda x, y: bleu(x, y, 2), lambda x, y: bleu(x, y, 4)):
        assert 0.0 <= fn(a, b) <= 1.0
    assert unigram_f1(a, b) == unigram_f1(b, a)
    if any(ch.isalnum() for ch in a):
        assert unigram_f1(a, a) == 1.0


@given(texts, st.lists(st.sampled_from(["the", "of", "and", "it", "was"]), min_size=1, max_size=4))
def test_entity_f1_ignores_stopword_insertions(a, stop):
    ref = "Thierry Henry was born in Paris in 1847"
    pred = "Henry lived in Paris " + a
    noisy = pred + " " + " ".join(stop)
    assert entity_f1(pred, ref) == entity_f1(noisy, ref)


@given(st.lists(st.floats(0.1, 10), min_size=1, max_size=5))
def test_accuracy_depends_on_argmax_only(_):
    cands = ["paris is big", "rome is old and big", "oslo"]
    assert knowledge_accuracy("rome is old", cands, 1) == knowledge_accuracy("rome rome is old old", cands, 1)


def _ex(eid, response, gold):
    cands = [KnowledgeSnippet(f"{eid}/c0", "Rome is old."), KnowledgeSnippet(f"{eid}/c1", gold)]
    return DialogueExample(eid, [("U1", "hi")], response, [KnowledgeSnippet(f"{eid}/p0", gold)], cands, 1)


def test_evaluate_report():
    exs = [_ex("0-0", "He was born in Paris.", "Henry was born in Paris."), _ex("1-0", "That happened in 1847.", "It was in 1847.")]
    rep = evaluate({"0-0": "He was born in Paris.", "1-0": "Rome is old."}, exs)
    assert rep.n_examples == 2
    assert rep.acc == 0.5
    assert rep.f1 == pytest.approx((1.0 + 0.0) / 2)
    rec = rep.as_record()
    assert rec["f1"] == 50.0 and rec["acc"] == 50.0
    assert "KF1" in rep.as_table()
    for v in (rep.f1, rep.rouge_l, rep.bleu2, rep.bleu4, rep.kf1, rep.ef1, rep.acc):
        assert 0 <= v <= 1


def test_taxonomy_single_and_normalised():
    rep = taxonomy_report([HallucinationLabel("other_ok", "a")])
    assert rep.fractions["other_ok"] == 1.0
    assert rep.subtotals == {"intrinsic": 0.0, "extrinsic": 0.0, "other": 1.0}
    labels = [HallucinationLabel(c, str(i)) for i, c in enumerate(CATEGORIES * 3 + CATEGORIES[:4])]
    rep = taxonomy_report(labels)
    assert sum(rep.fractions.values()) == pytest.approx(1.0, abs=1e-9)
    assert "intrinsic (total)" in rep.as_table()


def test_taxonomy_errors(tmp_path):
    with pytest.raises(ValueError):
        taxonomy_report([])
    with pytest.raises(ValueError):
        HallucinationLabel("made_up", "x")
    with pytest.raises(ValueError):
        taxonomy_report([HallucinationLabel("other_ok", "a"), HallucinationLabel("other_ok", "a")])
    path = tmp_path / "l.jsonl"
    path.write_text('{"example_id": "1", "category": "nope"}\n')
    with pytest.raises(IngestionError, match=":1:"):
        read_labels(path)
