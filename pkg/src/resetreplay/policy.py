"""Neural n-gram token policy with exact gradients and an AdamW optimizer.

The policy maps the last ``n`` tokens of a context to next-token logits::

    x = concat(E[t_1], ..., E[t_n])
    h = tanh(W_h x + b_h)
    logits = W_o h + b_o

Contexts shorter than the window are left-padded with ``bos_id``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

GROUPS = ("embedding", "hidden", "output")
# tensor name -> parameter group
TENSOR_GROUP = {
    "embedding": "embedding",
    "hidden_w": "hidden",
    "hidden_b": "hidden",
    "out_w": "output",
    "out_b": "output",
}
TENSORS = tuple(TENSOR_GROUP)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class Vocab:
    symbols: tuple[str, ...]
    bos_id: int
    eos_id: int
    sep_id: int

    def __post_init__(self):
        ids = (self.bos_id, self.eos_id, self.sep_id)
        if len(set(ids)) != 3 or not all(0 <= i < len(self.symbols) for i in ids):
            raise ValueError(f"special ids must be distinct and in range: {ids}")
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("duplicate symbols in vocab")

    def __len__(self):
        return len(self.symbols)

    def encode(self, text: str) -> list[int]:
        index = {s: i for i, s in enumerate(self.symbols)}
        try:
            return [index[ch] for ch in text]
        except KeyError as exc:
            raise ValueError(f"symbol {exc.args[0]!r} not in vocab") from None

    def decode(self, tokens: Sequence[int]) -> str:
        return "".join(self.symbols[t] for t in tokens)


@dataclass
class PolicyParams:
    embedding: np.ndarray  # V x d
    hidden_w: np.ndarray  # d_h x (n*d)
    hidden_b: np.ndarray  # d_h
    out_w: np.ndarray  # V x d_h
    out_b: np.ndarray  # V
    dims: tuple[int, int, int, int]  # (V, d, d_h, n)

    def __post_init__(self):
        V, d, d_h, n = self.dims
        expected = {
            "embedding": (V, d),
            "hidden_w": (d_h, n * d),
            "hidden_b": (d_h,),
            "out_w": (V, d_h),
            "out_b": (V,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError(
                    f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in TENSORS}

    def copy(self) -> "PolicyParams":
        return PolicyParams(**{k: v.copy() for k, v in self.tensors().items()},
                            dims=self.dims)

    def map(self, fn: Callable[[str, np.ndarray], np.ndarray]) -> "PolicyParams":
        return PolicyParams(**{k: fn(k, v) for k, v in self.tensors().items()},
                            dims=self.dims)

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.tensors().values()])

    @classmethod
    def from_flat(cls, vec: np.ndarray, dims) -> "PolicyParams":
        zero = zeros_like_params(dims)
        out, pos = {}, 0
        for name, arr in zero.tensors().items():
            out[name] = np.array(vec[pos:pos + arr.size], dtype=np.float64).reshape(arr.shape)
            pos += arr.size
        return cls(**out, dims=tuple(dims))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.tensors().values())


def zeros_like_params(dims) -> PolicyParams:
    V, d, d_h, n = dims
    return PolicyParams(
        embedding=np.zeros((V, d)),
        hidden_w=np.zeros((d_h, n * d)),
        hidden_b=np.zeros(d_h),
        out_w=np.zeros((V, d_h)),
        out_b=np.zeros(V),
        dims=tuple(dims),
    )


def init_params(seed: int, dims) -> PolicyParams:
    """Uniform(-s, s) init with s = 1/sqrt(fan_in) of each tensor's layer."""
    V, d, d_h, n = dims
    if min(dims) <= 0:
        raise ValueError(f"dims must be positive, got {dims}")
    rng = np.random.default_rng(seed)

    def u(shape, fan_in):
        s = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-s, s, size=shape)

    # embedding rows are looked up, so fan_in is 1 (one-hot input)
    return PolicyParams(
        embedding=u((V, d), 1),
        hidden_w=u((d_h, n * d), n * d),
        hidden_b=u((d_h,), n * d),
        out_w=u((V, d_h), d_h),
        out_b=u((V,), d_h),
        dims=(V, d, d_h, n),
    )


# ---------------------------------------------------------------------------
# forward pass

def _windows(context: Sequence[int], n: int, bos_id: int) -> np.ndarray:
    ctx = list(context[-n:])
    return np.array([bos_id] * (n - len(ctx)) + ctx, dtype=np.int64)


def _check_ids(tokens: np.ndarray, V: int):
    if tokens.size and (tokens.min() < 0 or tokens.max() >= V):
        raise ValueError(f"token id out of range [0, {V})")


def _forward(params: PolicyParams, windows: np.ndarray):
    """Batched forward over an (M, n) array of context windows."""
    x = params.embedding[windows].reshape(len(windows), -1)
    h = np.tanh(x @ params.hidden_w.T + params.hidden_b)
    logits = h @ params.out_w.T + params.out_b
    return x, h, logits


def _log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=-1, keepdims=True))


def forward_logits(params: PolicyParams, context: Sequence[int], bos_id: int) -> np.ndarray:
    if len(context) == 0:
        raise ValueError("context must be non-empty")
    V, _, _, n = params.dims
    w = _windows(context, n, bos_id)
    _check_ids(np.asarray(context), V)
    return _forward(params, w[None, :])[2][0]


def _gather_positions(prompts, responses, n: int, bos_id: int):
    """Flatten (prompt, response) pairs into per-token windows and targets."""
    windows, targets, owner = [], [], []
    for i, (x, y) in enumerate(zip(prompts, responses)):
        if len(y) == 0:
            raise ValueError("empty response")
        seq = [bos_id] * n + list(x) + list(y)
        start = n + len(x)
        for t in range(len(y)):
            windows.append(seq[start + t - n:start + t])
            targets.append(y[t])
            owner.append(i)
    return (np.array(windows, dtype=np.int64).reshape(-1, n),
            np.array(targets, dtype=np.int64),
            np.array(owner, dtype=np.int64))


def batch_logprobs(params: PolicyParams, prompts, responses, bos_id: int) -> np.ndarray:
    """log pi(response | prompt) for each pair, summed over response tokens."""
    V, _, _, n = params.dims
    windows, targets, owner = _gather_positions(prompts, responses, n, bos_id)
    _check_ids(windows, V)
    _check_ids(targets, V)
    logp = _log_softmax(_forward(params, windows)[2])
    tok = logp[np.arange(len(targets)), targets]
    return np.bincount(owner, weights=tok, minlength=len(prompts))


def sequence_logprob(params: PolicyParams, prompt, response, bos_id: int) -> float:
    return float(batch_logprobs(params, [prompt], [response], bos_id)[0])


# ---------------------------------------------------------------------------
# gradients

def logprob_backward(params: PolicyParams, prompts, responses, weights,
                     bos_id: int) -> PolicyParams:
    """Gradient of sum_i weights[i] * log pi(responses[i] | prompts[i])."""
    V, d, _, n = params.dims
    weights = np.asarray(weights, dtype=np.float64)
    keep = [i for i, w in enumerate(weights) if w != 0.0]
    g = zeros_like_params(params.dims)
    if not keep:
        return g
    windows, targets, owner = _gather_positions(
        [prompts[i] for i in keep], [responses[i] for i in keep], n, bos_id)
    _check_ids(windows, V)
    coef = weights[keep][owner]
    x, h, logits = _forward(params, windows)
    probs = np.exp(_log_softmax(logits))
    gz = -probs
    gz[np.arange(len(targets)), targets] += 1.0
    gz *= coef[:, None]
    g.out_w = gz.T @ h
    g.out_b = gz.sum(axis=0)
    ga = (gz @ params.out_w) * (1.0 - h * h)
    g.hidden_w = ga.T @ x
    g.hidden_b = ga.sum(axis=0)
    gx = (ga @ params.hidden_w).reshape(len(windows), n, d)
    np.add.at(g.embedding, windows.ravel(), gx.reshape(-1, d))
    return g


def grad(params: PolicyParams, loss_closure: Callable[[PolicyParams], "object"]):
    """Evaluate ``loss_closure(params)`` and return (loss_value, gradient).

    The closure returns a LossValue whose ``terms`` hold dL/dlog pi for every
    policy sequence it touched; the gradient is assembled by backprop through
    the sequence log-probabilities.
    """
    value = loss_closure(params)
    if not math.isfinite(value.scalar):
        raise FloatingPointError(f"non-finite loss: {value.scalar}")
    g = logprob_backward(params, value.terms.prompts, value.terms.responses,
                         value.terms.weights, value.terms.bos_id)
    return value, g


# ---------------------------------------------------------------------------
# sampling

def sample_responses(params: PolicyParams, prompt, K: int, temperature: float,
                     max_len: int, rng: np.random.Generator, vocab: Vocab,
                     greedy: bool = False) -> list[list[int]]:
    return sample_batch(params, [prompt], K, temperature, max_len,
                        [rng.random((K, max_len))], vocab, greedy)[0]


def sample_batch(params: PolicyParams, prompts, K: int, temperature: float,
                 max_len: int, uniforms, vocab: Vocab, greedy: bool = False):
    """Autoregressive sampling of K responses per prompt in one batched loop.

    ``uniforms[i]`` is a (K, max_len) array of U(0,1) draws owned by prompt i,
    consumed by inverse-CDF sampling so each prompt's samples depend only on
    its own stream.
    """
    if K < 1 or max_len < 1:
        raise ValueError("K and max_len must be positive")
    if not greedy and temperature <= 0:
        raise ValueError("temperature must be positive")
    n = params.dims[3]
    rows = [(i, k) for i in range(len(prompts)) for k in range(K)]
    ctx = [([vocab.bos_id] * n + list(prompts[i])) for i, _ in rows]
    out = [[] for _ in rows]
    alive = np.ones(len(rows), dtype=bool)
    for t in range(max_len):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        windows = np.array([ctx[r][-n:] for r in idx], dtype=np.int64)
        logits = _forward(params, windows)[2]
        if greedy:
            tok = logits.argmax(axis=1)
        else:
            p = np.exp(_log_softmax(logits / temperature))
            cdf = np.cumsum(p, axis=1)
            u = np.array([uniforms[rows[r][0]][rows[r][1], t] for r in idx])
            tok = (cdf <= (u * cdf[:, -1])[:, None]).sum(axis=1)
            tok = np.minimum(tok, logits.shape[1] - 1)
        for r, tk in zip(idx, tok):
            tk = int(tk)
            out[r].append(tk)
            ctx[r].append(tk)
            if tk == vocab.eos_id:
                alive[r] = False
    grouped = [[] for _ in prompts]
    for (i, _), seq in zip(rows, out):
        grouped[i].append(seq)
    return grouped


# ---------------------------------------------------------------------------
# optimizer

@dataclass
class OptimizerState:
    first_moment: PolicyParams
    second_moment: PolicyParams
    step_count: int = 0
    lr_base: float = 1e-2
    warmup_frac: float = 0.1
    total_steps: int = 1
    weight_decay: float = 0.01

    @classmethod
    def create(cls, dims, lr_base=1e-2, warmup_frac=0.1, total_steps=1,
               weight_decay=0.01) -> "OptimizerState":
        if not 0.0 <= warmup_frac < 1.0:
            raise ValueError("warmup_frac must lie in [0, 1)")
        return cls(zeros_like_params(dims), zeros_like_params(dims), 0,
                   lr_base, warmup_frac, max(int(total_steps), 1), weight_decay)

    def copy(self) -> "OptimizerState":
        return OptimizerState(self.first_moment.copy(), self.second_moment.copy(),
                              self.step_count, self.lr_base, self.warmup_frac,
                              self.total_steps, self.weight_decay)


def warmup_steps(state: OptimizerState) -> int:
    return math.ceil(state.warmup_frac * state.total_steps)


def lr_at(state: OptimizerState, step: int) -> float:
    """Linear warmup (nonzero at step 0) then cosine decay to 0 at total_steps."""
    w = warmup_steps(state)
    if step < w:
        return state.lr_base * (step + 1) / w
    span = max(state.total_steps - w, 1)
    progress = min((step - w) / span, 1.0)
    return state.lr_base * 0.5 * (1.0 + math.cos(math.pi * progress))


def adamw_step(params: PolicyParams, grads: PolicyParams, state: OptimizerState):
    """One AdamW descent step; ``grads`` is the gradient of the loss."""
    if params.dims != grads.dims:
        raise ValueError("gradient dims do not match params")
    lr = lr_at(state, state.step_count)
    t = state.step_count + 1
    bc1 = 1.0 - ADAM_BETA1 ** t
    bc2 = 1.0 - ADAM_BETA2 ** t
    new_p, new_m, new_v = {}, {}, {}
    for name, p in params.tensors().items():
        g = getattr(grads, name)
        m = ADAM_BETA1 * getattr(state.first_moment, name) + (1 - ADAM_BETA1) * g
        v = ADAM_BETA2 * getattr(state.second_moment, name) + (1 - ADAM_BETA2) * g * g
        p = p * (1.0 - lr * state.weight_decay)
        new_p[name] = p - lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
        new_m[name], new_v[name] = m, v
    dims = params.dims
    new_state = OptimizerState(
        PolicyParams(**new_m, dims=dims), PolicyParams(**new_v, dims=dims), t,
        state.lr_base, state.warmup_frac, state.total_steps, state.weight_decay)
    return PolicyParams(**new_p, dims=dims), new_state


# ---------------------------------------------------------------------------
# checkpoints

def params_to_dict(params: PolicyParams) -> dict:
    return {"dims": list(params.dims),
            "groups": {k: v.tolist() for k, v in params.tensors().items()}}


def params_from_dict(obj: dict) -> PolicyParams:
    dims = tuple(int(x) for x in obj["dims"])
    groups = obj["groups"]
    return PolicyParams(**{k: np.array(groups[k], dtype=np.float64) for k in TENSORS},
                        dims=dims)


def save_checkpoint(params: PolicyParams, path) -> None:
    # float repr is the shortest string that round-trips exactly
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(params_to_dict(params), fh)
        fh.write("\n")


def load_checkpoint(path) -> PolicyParams:
    with open(path, encoding="utf-8") as fh:
        return params_from_dict(json.load(fh))
