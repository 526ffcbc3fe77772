"""Synthetic knowledge corpus and dialogues with planted confusable facts.

Every entity has several templated facts of the same shape ("X was born in
Y", "X lived in Y2"), so retrieval for a question about X surfaces facts
that differ from the gold one only in a single entity span.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from ._validation import check_positive_int, check_random_state
from .corpus import KnowledgeCorpus, KnowledgeSnippet, write_corpus

FIRST = (
    "Alma Bruno Clara Dario Elena Felix Greta Hugo Ines Jonas Katia Lorenz Mira Nils Olga "
    "Pavel Rosa Sven Tilda Ugo Vera Walter Yara Zeno Agnes Boris Celia Dmitri Edith Florian"
).split()
LAST = (
    "Adler Berger Castell Dorn Eckhart Falk Grau Hale Ibsen Jansen Krall Lindqvist Moreau "
    "Novak Orsini Pratt Quist Rainer Sorel Thorne Ulrich Vance Wexler Young Zoller"
).split()
CITIES = (
    "Paris Montreal London Rome Vienna Lisbon Prague Oslo Dublin Madrid Berlin Warsaw Geneva "
    "Naples Seville Bergen Lyon Porto Krakow Turin Antwerp Bremen Malmo Ghent"
).split()
ADJ = "Silent Hidden Golden Broken Distant Frozen Hollow Scarlet Quiet Wandering Burning Pale Endless".split()
NOUN = "River Garden Harbor Lantern Mountain Orchard Tower Valley Winter Mirror Compass Meadow Bridge".split()
PERSON_FACTS = {
    "born": ("{x} was born in {c}.", ["Where was {x} born?", "Do you know where {x} was born?", "Which city was {x} born in?"]),
    "grew": ("{x} grew up in {c}.", ["Where did {x} grow up?", "Do you know where {x} grew up?", "In which city did {x} grow up?"]),
    "studied": ("{x} studied in {c}.", ["Where did {x} study?", "Do you know where {x} studied?", "In which city did {x} study?"]),
    "worked": ("{x} worked in {c}.", ["Where did {x} work?", "Do you know where {x} worked?", "In which city did {x} work?"]),
    "died": ("{x} died in {c}.", ["Where did {x} die?", "Do you know where {x} died?", "In which city did {x} die?"]),
}
WORK_FACTS = {
    "published": ("{x} was published in {y}.", ["When was {x} published?", "Do you know when {x} was published?", "In what year was {x} published?"]),
    "author": ("{x} was written by {p}.", ["Who wrote {x}?", "Do you know who wrote {x}?", "Who is the author of {x}?"]),
    "set": ("{x} is set in {c}.", ["Where is {x} set?", "Do you know where {x} is set?", "In which city is {x} set?"]),
    "printed": ("{x} was first printed in {c}.", ["Where was {x} first printed?", "Do you know where {x} was first printed?", "In which city was {x} first printed?"]),
}
OPENERS = ["I have been reading about {x}.", "I love {x}.", "Tell me something about {x}.", "{x} came up today."]
# reply style follows the question template, so only the fact is unpredictable
REPLIES = ["{fact}", "Yes! {fact}", "I think {fact}"]


@dataclass
class Fact:
    entity: str
    relation: str
    text: str


@dataclass
class SyntheticData:
    corpus: KnowledgeCorpus
    train: list[dict]
    test: list[dict]
    gazetteer: dict[str, str]
    facts: list[Fact]


def _facts(n_entities: int, rng) -> tuple[list[Fact], dict[str, str]]:
    n_people = (n_entities + 1) // 2
    n_works = n_entities - n_people
    if n_people > min(len(FIRST), len(LAST)) or n_works > len(ADJ) * len(NOUN):
        raise ValueError(f"at most {2 * min(len(FIRST), len(LAST))} entities are supported")
    firsts = rng.permutation(FIRST)[:n_people]
    lasts = rng.permutation(LAST)[:n_people]
    people = [f"{f} {l}" for f, l in zip(firsts, lasts)]
    pairs = [(a, b) for a in ADJ for b in NOUN]
    works = ["The " + " ".join(pairs[i]) for i in rng.permutation(len(pairs))[:n_works]]
    gazetteer = {p: "person" for p in people}
    gazetteer.update({w: "work" for w in works})
    gazetteer.update({c: "place" for c in CITIES})
    facts = []
    for p in people:
        cities = rng.choice(CITIES, size=len(PERSON_FACTS), replace=False)
        for (rel, (template, _)), city in zip(PERSON_FACTS.items(), cities):
            facts.append(Fact(p, rel, template.format(x=p, c=city)))
    for w in works:
        cities = rng.choice(CITIES, size=2, replace=False)
        values = {
            "published": dict(y=int(rng.integers(1800, 2000))),
            "author": dict(p=people[int(rng.integers(len(people)))]),
            "set": dict(c=cities[0]),
            "printed": dict(c=cities[1]),
        }
        for rel, (template, _) in WORK_FACTS.items():
            facts.append(Fact(w, rel, template.format(x=w, **values[rel])))
    return facts, gazetteer


def synthesize(n_entities: int = 50, n_dialogues: int = 500, test_fraction: float = 0.2, seed: int = 0) -> SyntheticData:
    """Build the corpus, train/test dialogue records and the entity gazetteer."""
    n_entities = check_positive_int(n_entities, "n_entities")
    n_dialogues = check_positive_int(n_dialogues, "n_dialogues")
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    rng = check_random_state(seed)
    facts, gazetteer = _facts(n_entities, rng)
    corpus = KnowledgeCorpus([KnowledgeSnippet(id=f"k{i}", text=f.text, title=f.entity) for i, f in enumerate(facts)])
    by_entity: dict[str, list[Fact]] = {}
    for f in facts:
        by_entity.setdefault(f.entity, []).append(f)
    dialogues = []
    for d in range(n_dialogues):
        fact = facts[d % len(facts)] if d < len(facts) else facts[int(rng.integers(len(facts)))]
        x = fact.entity
        questions = {**PERSON_FACTS, **WORK_FACTS}[fact.relation][1]
        q = int(rng.integers(len(questions)))
        question = questions[q].format(x=x)
        text = question
        if rng.random() < 0.5:
            text = OPENERS[int(rng.integers(len(OPENERS)))].format(x=x) + " " + question
        reply = REPLIES[q].format(fact=fact.text)
        others = [f.text for f in facts if f.entity != x]
        distractors = [f.text for f in by_entity[x] if f is not fact]
        distractors += [others[int(i)] for i in rng.choice(len(others), size=2, replace=False)]
        candidates = distractors + [fact.text]
        order = rng.permutation(len(candidates))
        candidates = [candidates[int(i)] for i in order]
        dialogues.append(
            {
                "topic": x,
                "turns": [
                    {
                        "speaker": "apprentice",
                        "text": text,
                        "response": reply,
                        "positives": [fact.text],
                        "candidates": candidates,
                        "gold_candidate": candidates.index(fact.text),
                    }
                ],
            }
        )
    # the first pass covers every fact once and always goes to training, so each
    # held-out dialogue asks about a fact the training dialogues also cite
    n_test = max(1, int(round(test_fraction * n_dialogues)))
    covered = min(len(facts), n_dialogues)
    if n_dialogues - covered < n_test:
        raise ValueError(f"need at least {covered + n_test} dialogues for a {n_test}-dialogue test split")
    rest = [dialogues[covered + int(i)] for i in rng.permutation(n_dialogues - covered)]
    test, train = rest[:n_test], dialogues[:covered] + rest[n_test:]
    train = [train[int(i)] for i in rng.permutation(len(train))]
    return SyntheticData(corpus, train, test, gazetteer, facts)


def write_gazetteer(gazetteer: dict[str, str], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for phrase in sorted(gazetteer):
            fh.write(f"{phrase}\t{gazetteer[phrase]}\n")


def write_dialogues(records, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


def write_synthetic(data: SyntheticData, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "corpus": out / "corpus.jsonl",
        "train": out / "train.jsonl",
        "test": out / "test.jsonl",
        "gazetteer": out / "gazetteer.tsv",
    }
    write_corpus(data.corpus, paths["corpus"])
    write_dialogues(data.train, paths["train"])
    write_dialogues(data.test, paths["test"])
    write_gazetteer(data.gazetteer, paths["gazetteer"])
    return paths
