"""Verifiable reward scoring, best/worst pair selection and pass@1."""
from __future__ import annotations

from dataclasses import dataclass

from .policy import PolicyParams, sample_batch
from .tasks import DIGITS, LETTERS, Task


@dataclass(frozen=True)
class RewardVerifier:
    task: Task
    partial_credit: bool = True

    def score(self, prompt, response) -> float:
        """Score a token response in [0, 1].

        Exact match is 1.0. With partial credit a well-formed wrong answer earns
        0.5 on mod_add and the fraction of matching positions on reverse/sort.
        Anything else, including responses cut off before eos, scores 0.0.
        """
        vocab = self.task.vocab
        expected = self.task.solve(vocab.decode(prompt))
        if not response or response[-1] != vocab.eos_id:
            return 0.0
        body = response[:-1]
        if any(t in (vocab.bos_id, vocab.eos_id, vocab.sep_id) for t in body):
            return 0.0
        text = vocab.decode(body)
        if text == expected:
            return 1.0
        if not self.partial_credit:
            return 0.0
        if self.task.kind == "mod_add":
            return 0.5 if len(text) == 1 and text in DIGITS else 0.0
        if not text or any(ch not in LETTERS for ch in text):
            return 0.0
        hits = sum(a == b for a, b in zip(text, expected))
        return hits / max(len(text), len(expected))


@dataclass
class ScoredResponse:
    response: list
    score: float
    index: int


def select_pair(scored: list[ScoredResponse]):
    """(winner, loser, degenerate): first-sampled best and first-sampled worst."""
    if len(scored) < 2:
        raise ValueError("need at least two scored responses")
    best = worst = scored[0]
    for s in scored[1:]:
        if s.score > best.score:
            best = s
        if s.score < worst.score:
            worst = s
    return best.response, worst.response, best.index == worst.index


def greedy_decode(params: PolicyParams, task: Task, prompts) -> list[list[int]]:
    return [r[0] for r in sample_batch(params, prompts, 1, 1.0, task.max_len, None,
                                       task.vocab, greedy=True)]


def pass_at_1(params: PolicyParams, eval_set, verifier: RewardVerifier) -> float:
    """Fraction of (prompt, answer) items whose greedy decode scores exactly 1.0."""
    if not eval_set:
        raise ValueError("eval_set must be non-empty")
    prompts = [p for p, _ in eval_set]
    decodes = greedy_decode(params, verifier.task, prompts)
    hits = sum(verifier.score(p, y) == 1.0 for p, y in zip(prompts, decodes))
    return hits / len(eval_set)
