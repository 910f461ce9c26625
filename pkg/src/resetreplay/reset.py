"""Shrink & perturb: pull selected parameter groups toward the initial policy."""
from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError
from .policy import GROUPS, TENSOR_GROUP, PolicyParams

SELECTORS = {
    "output": frozenset({"output"}),
    "hidden+output": frozenset({"hidden", "output"}),
    "all": frozenset(GROUPS),
}


def resolve_groups(selector: str) -> frozenset:
    try:
        return SELECTORS[selector]
    except KeyError:
        raise ConfigError(f"unknown reset selector {selector!r}; "
                          f"expected one of {sorted(SELECTORS)}", "reset_groups") from None


@dataclass(frozen=True)
class ResetSpec:
    alpha: float = 0.5
    groups: frozenset = SELECTORS["output"]

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}", "alpha")
        if not self.groups or not set(self.groups) <= set(GROUPS):
            raise ConfigError(f"bad reset groups {set(self.groups)}", "reset_groups")


def shrink_perturb(current: PolicyParams, init: PolicyParams, spec: ResetSpec) -> PolicyParams:
    """alpha * current + (1 - alpha) * init on ``spec.groups``; others copied."""
    if current.dims != init.dims:
        raise ValueError(f"dims mismatch: {current.dims} vs {init.dims}")
    a = spec.alpha

    def mix(name, p):
        if TENSOR_GROUP[name] not in spec.groups or a == 1.0:
            return p.copy()
        if a == 0.0:
            return getattr(init, name).copy()
        return a * p + (1.0 - a) * getattr(init, name)

    return current.map(mix)
