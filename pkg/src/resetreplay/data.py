"""Synthetic dataset generation and JSON Lines persistence."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .tasks import make_task, prompt_space, solve


@dataclass(frozen=True)
class DatasetRecord:
    prompt: str
    answer: str
    rejected: str | None = None

    def to_dict(self) -> dict:
        d = {"prompt": self.prompt, "answer": self.answer}
        if self.rejected is not None:
            d["rejected"] = self.rejected
        return d


def generate_dataset(task: str, size: int, seed: int) -> list[DatasetRecord]:
    """``size`` distinct prompts drawn without replacement, with correct answers."""
    if size < 1:
        raise ValueError("size must be >= 1")
    make_task(task)  # validates the kind
    space = prompt_space(task, size)
    if size > len(space):
        raise ValueError(f"{task} cannot provide {size} distinct prompts")
    order = np.random.default_rng(seed).permutation(len(space))[:size]
    return [DatasetRecord(space[i], solve(task, space[i])) for i in order]


def write_jsonl(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), ensure_ascii=False) + "\n")


def read_jsonl(path) -> list[DatasetRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            obj = json.loads(line)
            try:
                out.append(DatasetRecord(obj["prompt"], obj["answer"], obj.get("rejected")))
            except KeyError as exc:
                raise ValueError(f"{path}:{lineno}: missing key {exc.args[0]!r}") from None
    return out
