"""Offline heuristic responder for the ``mock`` completion backend.

It recognizes the pipeline's own prompt templates and answers them from
lexical overlap, so full runs work without any model service. Answers are
deterministic functions of the prompt.
"""

from __future__ import annotations

import json
import re

from .llm import MockLLM
from .prompts import load_prompt
from .sparse import Analyzer

_analyze = Analyzer(stopwords=True)
_PASSAGE = re.compile(r"^\[(\d+)\] ", re.M)


def _prefix(name: str) -> str:
    return load_prompt(name).split("{", 1)[0]


def _field(prompt: str, label: str, stop: str | None = None) -> str:
    start = prompt.find(label)
    if start < 0:
        return ""
    start += len(label)
    end = prompt.find(stop, start) if stop else -1
    return prompt[start : end if end >= 0 else None].strip()


def _passages(block: str) -> list[tuple[int, str]]:
    marks = list(_PASSAGE.finditer(block))
    out = []
    for m, nxt in zip(marks, marks[1:] + [None]):
        out.append((int(m.group(1)), block[m.end() : nxt.start() if nxt else None].strip()))
    return out


def overlap(query: str, text: str) -> float:
    q = set(_analyze(query))
    if not q:
        return 0.0
    return len(q & set(_analyze(text))) / len(q)


class OfflineResponder:
    def __init__(self, scale_max: int = 10, expansion_words: int = 64):
        self.scale_max = scale_max
        self.expansion_words = expansion_words
        self._first = _prefix("expand_first")
        self._next = _prefix("expand_next")
        self._point = _prefix("pointwise_v1")
        self._list = _prefix("listwise_v1")
        self._annotate = _prefix("annotate")

    def __call__(self, prompt: str) -> str:
        if prompt.startswith(self._first) or prompt.startswith(self._next):
            return self._expand(prompt)
        if prompt.startswith(self._point):
            query = _field(prompt, "Query:", "\n\nDocument:")
            doc = _field(prompt, "Document:", "\n\nRate the helpfulness")
            return str(round(self.scale_max * overlap(query, doc)))
        if prompt.startswith(self._list):
            query = _field(prompt, "Query:", "\n\n[1]")
            block = prompt[prompt.find("\n\n[1] ") + 2 :]
            block = block[: block.rfind("\n\nOutput the ranking")]
            ranked = sorted(_passages(block), key=lambda p: (-overlap(query, p[1]), p[0]))
            return " > ".join(f"[{i}]" for i, _ in ranked)
        if prompt.startswith(self._annotate):
            query = _field(prompt, "\nQuery:", "\n\nDoc:")
            doc = _field(prompt, "\n\nDoc:", "\n\nResponse:")
            return json.dumps({"score": round(10 * overlap(query, doc)), "reason": "query term overlap"})
        return ""

    def _expand(self, prompt: str) -> str:
        block = _field(prompt, "Possible helpful passages:", "\nPrior generated answer:")
        passages = _passages(block)
        if not passages:
            return _field(prompt, "Query:", "\nPossible helpful passages:")
        words = passages[0][1].split()
        return " ".join(words[: self.expansion_words])


def offline_llm(scale_max: int = 10) -> MockLLM:
    return MockLLM(responder=OfflineResponder(scale_max))
