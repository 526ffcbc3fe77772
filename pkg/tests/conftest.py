import json

import numpy as np
import pytest
import torch
from hypothesis import settings

from mixcl.data import DialogueExample
from mixcl.corpus import KnowledgeSnippet
from mixcl.model import CallableModel

settings.register_profile("repo", deadline=None, max_examples=60)
settings.load_profile("repo")
torch.set_num_threads(1)


def uniform_model(vocab_size=4):
    return CallableModel(lambda inp, prefix: np.full(vocab_size, 1.0 / vocab_size), vocab_size)


def table_model(table, vocab_size):
    """Distribution depends only on the prefix length: ``table[t]``, last row repeated."""

    def fn(inp, prefix):
        return np.asarray(table[min(len(prefix), len(table) - 1)], dtype=np.float64)

    return CallableModel(fn, vocab_size)


@pytest.fixture
def write_jsonl(tmp_path):
    def _write(name, records, raw_lines=None):
        path = tmp_path / name
        lines = raw_lines if raw_lines is not None else [json.dumps(r) for r in records]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    return _write


def make_example(eid="0-0", context="Where was Thierry Henry born?", response="He was born in Paris.", positives=("He was born and raised in Paris.",)):
    return DialogueExample(
        id=eid,
        context=[("U1", context)],
        response=response,
        positives=[KnowledgeSnippet(id=f"{eid}/pos{i}", text=t) for i, t in enumerate(positives)],
    )


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one pass/fail line for an acceptance criterion and return the verdict."""

    def record(number, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
