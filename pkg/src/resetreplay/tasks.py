"""Synthetic verifiable tasks: vocabularies, reference solvers, prompt spaces.

``mod_add``  prompt ``"17+5="``, answer the last digit of the sum (``"2"``).
             The second operand is a single digit so the answer depends only
             on the four tokens before the response.
``reverse``  prompt ``"abc|"``, answer ``"cba"``.
``sort``     prompt ``"cab|"``, answer ``"abc"``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

from .policy import Vocab

TASK_KINDS = ("mod_add", "reverse", "sort")

BOS, EOS, SEP = "^", "$", "|"
DIGITS = "0123456789"
LETTERS = "abcde"
MAX_LETTERS = 4


@dataclass(frozen=True)
class Task:
    kind: str
    vocab: Vocab
    max_len: int  # response budget, eos included
    min_window: int  # context window that sees everything the answer needs

    def solve(self, prompt_text: str) -> str:
        return solve(self.kind, prompt_text)

    def encode_prompt(self, text: str) -> list[int]:
        return self.vocab.encode(text)

    def encode_answer(self, text: str) -> list[int]:
        return self.vocab.encode(text) + [self.vocab.eos_id]


def make_task(kind: str) -> Task:
    if kind == "mod_add":
        symbols = tuple(DIGITS + "+=" + BOS + EOS + SEP)
        vocab = Vocab(symbols, symbols.index(BOS), symbols.index(EOS), symbols.index(SEP))
        return Task(kind, vocab, max_len=2, min_window=4)
    if kind in ("reverse", "sort"):
        symbols = tuple(LETTERS + BOS + EOS + SEP)
        vocab = Vocab(symbols, symbols.index(BOS), symbols.index(EOS), symbols.index(SEP))
        return Task(kind, vocab, max_len=MAX_LETTERS + 1, min_window=2 * MAX_LETTERS + 1)
    raise ValueError(f"unknown task {kind!r}; expected one of {TASK_KINDS}")


def solve(kind: str, prompt: str) -> str:
    if kind == "mod_add":
        a, b = prompt.rstrip("=").split("+")
        return str((int(a) + int(b)) % 10)
    body = prompt.rstrip(SEP)
    if kind == "reverse":
        return body[::-1]
    if kind == "sort":
        return "".join(sorted(body))
    raise ValueError(f"unknown task {kind!r}")


def prompt_space(kind: str, size: int) -> list[str]:
    """Smallest canonical family of distinct prompts holding ``size`` items."""
    if kind == "mod_add":
        width = 1
        while 10 ** width * 10 < size:
            width += 1
        return [f"{a}+{b}=" for a in range(10 ** width) for b in range(10)]
    out = []
    for n in range(1, MAX_LETTERS + 1):
        out.extend("".join(p) + SEP for p in itertools.product(LETTERS, repeat=n))
    if len(out) < size:
        raise ValueError(f"{kind} supports at most {len(out)} distinct prompts")
    return out
