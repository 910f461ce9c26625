"""Training objectives over batches of preference triples.

Every loss is a function of sequence log-probabilities, so each one returns,
besides its value, the derivative of the loss with respect to every policy
log-probability it used (``LossValue.terms``). ``policy.grad`` turns those
weights into parameter gradients.

Preference objectives (``r = log pi - log pi_ref``, ``m = r_w - r_l``):

=======  ==============================================================
dpo      -log sigmoid(beta * m)
simpo    -log sigmoid(beta * (lp_w/|y_w| - lp_l/|y_l|) - gamma)
ipo      (m - 1/(2*tau))**2
kto      gamma * mean over [1 - sigmoid(beta*(r_w - kl_l)),
                            1 - sigmoid(beta*(kl_w - r_l))]
         with kl_w = max(0, mean r_w), kl_l = max(0, mean r_l)
rdpo     -log sigmoid(beta * m - gamma * (|y_w| - |y_l|))
=======  ==============================================================

All are averaged over the batch. A pair whose winner and loser are
token-identical keeps its value but contributes no gradient (kto excepted:
its batch-level reference point couples the pairs).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .policy import PolicyParams, batch_logprobs

PREFERENCE_KINDS = ("dpo", "simpo", "ipo", "kto", "rdpo")
KINDS = ("sft",) + PREFERENCE_KINDS + ("hybrid",)

# per-method (beta, gamma) used when a config leaves them unset
DEFAULT_HPARAMS = {
    "dpo": (0.01, None),
    "kto": (0.01, 1.0),
    "ipo": (None, 0.5),
    "rdpo": (0.01, 0.6),
    "simpo": (2.0, 0.55),
    "sft": (None, None),
}


@dataclass
class Triple:
    prompt: list
    winner: list
    loser: list
    origin: str = "rollout"  # rollout | initial
    winner_score: float | None = None
    loser_score: float | None = None

    @property
    def degenerate(self) -> bool:
        return list(self.winner) == list(self.loser)


@dataclass
class LossSpec:
    kind: str = "dpo"
    beta: float | None = None
    gamma: float | None = None
    lam: float = 0.0
    inner: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.kind == "hybrid" and self.inner not in PREFERENCE_KINDS:
            raise ValueError("hybrid loss needs a preference inner kind")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must be in [0, 1], got {self.lam}")
        pref = self.inner if self.kind == "hybrid" else self.kind
        beta, gamma = DEFAULT_HPARAMS.get(pref, (None, None))
        if self.beta is None:
            self.beta = beta
        if self.gamma is None:
            self.gamma = gamma
        if pref in ("dpo", "simpo", "kto", "rdpo") and not (self.beta and self.beta > 0):
            raise ValueError(f"{pref} needs beta > 0")
        if pref == "ipo" and not (self.gamma and self.gamma > 0):
            raise ValueError("ipo needs tau (gamma) > 0")

    @property
    def preference_kind(self) -> str:
        return self.inner if self.kind == "hybrid" else self.kind


@dataclass
class SeqWeights:
    """dL/dlog pi_theta(response | prompt) for each touched sequence."""
    prompts: list = field(default_factory=list)
    responses: list = field(default_factory=list)
    weights: list = field(default_factory=list)
    bos_id: int = 0

    def scaled(self, c: float) -> "SeqWeights":
        return SeqWeights(self.prompts, self.responses, [c * w for w in self.weights],
                          self.bos_id)

    def __add__(self, other: "SeqWeights") -> "SeqWeights":
        return SeqWeights(self.prompts + other.prompts, self.responses + other.responses,
                          self.weights + other.weights, self.bos_id)


@dataclass
class LossValue:
    scalar: float
    components: dict
    terms: SeqWeights
    degenerate_pairs: int = 0


def log_sigmoid(z):
    """Stable log(sigmoid(z)) = -softplus(-z)."""
    return -np.logaddexp(0.0, -np.asarray(z, dtype=np.float64))


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    return np.exp(log_sigmoid(z))


def _check(batch):
    if len(batch) == 0:
        raise ValueError("empty batch")


def _pair_logprobs(params: PolicyParams, batch, bos_id):
    prompts = [t.prompt for t in batch]
    lp = batch_logprobs(params, prompts + prompts,
                        [t.winner for t in batch] + [t.loser for t in batch], bos_id)
    return lp[:len(batch)], lp[len(batch):]


def _pair_terms(batch, d_w, d_l, bos_id, mask_degenerate=True) -> SeqWeights:
    live = np.array([0.0 if (mask_degenerate and t.degenerate) else 1.0 for t in batch])
    prompts = [t.prompt for t in batch]
    return SeqWeights(prompts + prompts,
                      [t.winner for t in batch] + [t.loser for t in batch],
                      list(d_w * live) + list(d_l * live), bos_id)


def sft_loss(params: PolicyParams, batch, bos_id: int) -> LossValue:
    _check(batch)
    lp = batch_logprobs(params, [t.prompt for t in batch], [t.winner for t in batch], bos_id)
    B = len(batch)
    value = float(-lp.mean())
    terms = SeqWeights([t.prompt for t in batch], [t.winner for t in batch],
                       [-1.0 / B] * B, bos_id)
    return LossValue(value, {"sft": value}, terms)


def _ratios(params, reference, batch, bos_id):
    pw, pl = _pair_logprobs(params, batch, bos_id)
    rw, rl = _pair_logprobs(reference, batch, bos_id)
    return pw - rw, pl - rl


def _n_degenerate(batch):
    return sum(t.degenerate for t in batch)


def dpo_loss(params, reference, batch, beta: float, bos_id: int) -> LossValue:
    _check(batch)
    r_w, r_l = _ratios(params, reference, batch, bos_id)
    z = beta * (r_w - r_l)
    B = len(batch)
    value = float(-log_sigmoid(z).mean())
    # d/dz of -log sigmoid(z) is -sigmoid(-z)
    dz = -sigmoid(-z) / B
    terms = _pair_terms(batch, beta * dz, -beta * dz, bos_id)
    return LossValue(value, {"dpo": value}, terms, _n_degenerate(batch))


def simpo_loss(params, batch, beta: float, gamma: float, bos_id: int) -> LossValue:
    _check(batch)
    if any(len(t.winner) == 0 or len(t.loser) == 0 for t in batch):
        raise ValueError("zero-length response")
    pw, pl = _pair_logprobs(params, batch, bos_id)
    nw = np.array([len(t.winner) for t in batch], dtype=np.float64)
    nl = np.array([len(t.loser) for t in batch], dtype=np.float64)
    z = beta * (pw / nw - pl / nl) - gamma
    B = len(batch)
    value = float(-log_sigmoid(z).mean())
    dz = -sigmoid(-z) / B
    terms = _pair_terms(batch, beta * dz / nw, -beta * dz / nl, bos_id)
    return LossValue(value, {"simpo": value}, terms, _n_degenerate(batch))


def ipo_loss(params, reference, batch, tau: float, bos_id: int) -> LossValue:
    _check(batch)
    r_w, r_l = _ratios(params, reference, batch, bos_id)
    resid = (r_w - r_l) - 1.0 / (2.0 * tau)
    B = len(batch)
    value = float((resid ** 2).mean())
    dm = 2.0 * resid / B
    terms = _pair_terms(batch, dm, -dm, bos_id)
    return LossValue(value, {"ipo": value}, terms, _n_degenerate(batch))


def kto_loss(params, reference, batch, beta: float, gamma: float, bos_id: int) -> LossValue:
    _check(batch)
    r_w, r_l = _ratios(params, reference, batch, bos_id)
    B = len(batch)
    kl_w, kl_l = r_w.mean(), r_l.mean()
    on_w, on_l = float(kl_w > 0), float(kl_l > 0)
    kl_w, kl_l = max(kl_w, 0.0), max(kl_l, 0.0)
    a = beta * (r_w - kl_l)  # desirable margin
    b = beta * (kl_w - r_l)  # undesirable margin
    sa, sb = sigmoid(a), sigmoid(b)
    value = float(gamma * (np.sum(1.0 - sa) + np.sum(1.0 - sb)) / (2 * B))
    # d(1 - sigmoid(z))/dz = -sigmoid(z) * sigmoid(-z)
    da = -gamma * sa * (1.0 - sa) / (2 * B)
    db = -gamma * sb * (1.0 - sb) / (2 * B)
    d_w = beta * da + on_w * beta * db.sum() / B
    d_l = -beta * db - on_l * beta * da.sum() / B
    # the batch-mean reference point couples pairs, so identical pairs still move
    terms = _pair_terms(batch, d_w, d_l, bos_id, mask_degenerate=False)
    return LossValue(value, {"kto": value}, terms, _n_degenerate(batch))


def rdpo_loss(params, reference, batch, beta: float, gamma: float, bos_id: int) -> LossValue:
    _check(batch)
    r_w, r_l = _ratios(params, reference, batch, bos_id)
    dlen = np.array([len(t.winner) - len(t.loser) for t in batch], dtype=np.float64)
    z = beta * (r_w - r_l) - gamma * dlen
    B = len(batch)
    value = float(-log_sigmoid(z).mean())
    dz = -sigmoid(-z) / B
    terms = _pair_terms(batch, beta * dz, -beta * dz, bos_id)
    return LossValue(value, {"rdpo": value}, terms, _n_degenerate(batch))


def preference_loss(spec: LossSpec, params, reference, batch, bos_id: int) -> LossValue:
    kind = spec.preference_kind
    if kind == "dpo":
        return dpo_loss(params, reference, batch, spec.beta, bos_id)
    if kind == "simpo":
        return simpo_loss(params, batch, spec.beta, spec.gamma, bos_id)
    if kind == "ipo":
        return ipo_loss(params, reference, batch, spec.gamma, bos_id)
    if kind == "kto":
        return kto_loss(params, reference, batch, spec.beta, spec.gamma, bos_id)
    if kind == "rdpo":
        return rdpo_loss(params, reference, batch, spec.beta, spec.gamma, bos_id)
    raise ValueError(f"not a preference loss: {kind!r}")


def hybrid_loss(lam: float, sft: LossValue, pref: LossValue) -> LossValue:
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    value = lam * sft.scalar + (1.0 - lam) * pref.scalar
    components = {**sft.components, **pref.components, "lambda": lam}
    terms = sft.terms.scaled(lam) + pref.terms.scaled(1.0 - lam)
    return LossValue(value, components, terms, pref.degenerate_pairs)


def compute_loss(spec: LossSpec, params, reference, batch, bos_id: int) -> LossValue:
    """Evaluate ``spec`` on a batch; hybrid uses ``spec.lam`` as the SFT weight."""
    if spec.kind == "sft":
        return sft_loss(params, batch, bos_id)
    if spec.kind == "hybrid":
        sft = sft_loss(params, batch, bos_id)
        pref = preference_loss(spec, params, reference, batch, bos_id)
        return hybrid_loss(spec.lam, sft, pref)
    return preference_loss(spec, params, reference, batch, bos_id)


def zero_margin_value(spec: LossSpec) -> float:
    """Closed-form loss when policy equals reference (all log-ratios zero)."""
    kind = spec.preference_kind
    if kind in ("dpo",):
        return math.log(2.0)
    if kind == "ipo":
        return 1.0 / (4.0 * spec.gamma ** 2)
    if kind == "kto":
        return spec.gamma / 2.0
    raise ValueError(f"no reference-equality closed form for {kind!r}")
