"""The Reset Replay training loop.

For every prompt batch the policy is replayed ``L`` times. Each replay
recomputes the rollout ratio and SFT ratio, rebuilds a transition batch from
fresh rollouts (mixing in initial pairs), pulls the policy toward its
initialization, takes one step on the hybrid loss and refreshes the reference.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .config import RunConfig
from .data import DatasetRecord, generate_dataset, read_jsonl
from .errors import ConfigError
from .losses import LossSpec, LossValue, Triple, compute_loss
from .policy import (OptimizerState, PolicyParams, TENSOR_GROUP, adamw_step, grad,
                     init_params, logprob_backward, sample_batch)
from .reset import ResetSpec, resolve_groups, shrink_perturb
from .reward import RewardVerifier, ScoredResponse, pass_at_1, select_pair
from .tasks import Task, make_task, prompt_space, solve

log = logging.getLogger(__name__)

METRIC_FIELDS = [
    "iteration", "replay", "eps", "lambda", "loss_total", "loss_sft", "loss_pref",
    "rollout_fraction", "degenerate_pairs", "mean_reward_winner", "mean_reward_loser",
    "pass_at_1_eval",
]

# stream-key slot reserved for rollouts of the initial policy
INIT_ROLLOUT_ITERATION = 0


# ---------------------------------------------------------------------------
# schedules

def _check_replay(ell, L):
    if not isinstance(L, int) or L < 1:
        raise ConfigError(f"replay number must be >= 1, got {L}", "L")
    if not 0 <= ell <= L:
        raise ValueError(f"replay index {ell} outside [0, {L}]")


def adjust_rollout_ratio(eps_init: float, ell: int, L: int) -> float:
    """eps_init * (1 - ell / 2L), written so integer fractions round once."""
    _check_replay(ell, L)
    return eps_init * ((2 * L - ell) / (2 * L))


def adjust_sft_ratio(lambda_init: float, ell: int, L: int) -> float:
    """lambda_init + ell / 2L, clamped to [0, 1]."""
    _check_replay(ell, L)
    return min(1.0, max(0.0, lambda_init + ell / (2 * L)))


@dataclass(frozen=True)
class ScheduleState:
    replay_index: int
    L: int
    eps_init: float
    lambda_init: float
    eps: float
    lam: float
    eps_kind: str = "linear"
    lambda_kind: str = "linear"

    @classmethod
    def at(cls, ell, L, eps_init, lambda_init, eps_kind="linear", lambda_kind="linear"):
        _check_replay(ell, L)
        eps = adjust_rollout_ratio(eps_init, ell, L) if eps_kind == "linear" else eps_init
        lam = adjust_sft_ratio(lambda_init, ell, L) if lambda_kind == "linear" else lambda_init
        return cls(ell, L, eps_init, lambda_init, eps, lam, eps_kind, lambda_kind)


def gate_selects_rollout(u: float, eps: float, gate_mode: str) -> bool:
    """Mixing gate for one prompt given its uniform draw ``u``.

    ``as_written``: rollout pair when eps < u, so P(rollout) = 1 - eps.
    ``prob_rollout``: rollout pair when u < eps, so P(rollout) = eps.
    """
    if gate_mode == "as_written":
        return eps < u
    if gate_mode == "prob_rollout":
        return u < eps
    raise ConfigError(f"unknown gate mode {gate_mode!r}", "gate_mode")


def prompt_stream(root: int, n: int, ell: int, index: int) -> np.random.Generator:
    """Independent generator per (seed, iteration, replay, prompt)."""
    return np.random.default_rng([root, n, ell, index])


# ---------------------------------------------------------------------------
# transition batches

@dataclass(frozen=True)
class PromptItem:
    index: int  # position in the training set; keys the rng streams
    prompt: list
    answer: list  # reference response, eos included
    record: DatasetRecord


class InitialPairSource:
    """Losing responses for initial pairs, computed once per prompt.

    ``dataset_rejected`` takes the record's rejected answer; ``init_rollout``
    samples K responses from the initial policy and keeps the worst.
    """

    def __init__(self, mode, init: PolicyParams, verifier: RewardVerifier, K: int,
                 temperature: float, root: int):
        if mode not in ("dataset_rejected", "init_rollout"):
            raise ConfigError(f"unknown initial pair source {mode!r}", "initial_source")
        self.mode = mode
        self.init = init
        self.verifier = verifier
        self.K = K
        self.temperature = temperature
        self.root = root
        self.cache: dict[int, list] = {}

    def losers(self, items: list[PromptItem]) -> list[list]:
        missing = [it for it in items if it.index not in self.cache]
        if missing and self.mode == "dataset_rejected":
            task = self.verifier.task
            for it in missing:
                if it.record.rejected is None:
                    raise ValueError(f"record {it.index} has no rejected answer")
                self.cache[it.index] = task.encode_answer(it.record.rejected)
        elif missing:
            task = self.verifier.task
            uniforms = []
            for it in missing:
                rng = prompt_stream(self.root, INIT_ROLLOUT_ITERATION, 0, it.index)
                uniforms.append(rng.random((self.K, task.max_len)))
            samples = sample_batch(self.init, [it.prompt for it in missing], self.K,
                                   self.temperature, task.max_len, uniforms, task.vocab)
            for it, ys in zip(missing, samples):
                scored = [ScoredResponse(y, self.verifier.score(it.prompt, y), i)
                          for i, y in enumerate(ys)]
                self.cache[it.index] = select_pair(scored)[1]
        return [self.cache[it.index] for it in items]


def build_transition_batch(policy: PolicyParams, items: list[PromptItem],
                           verifier: RewardVerifier, K: int, eps: float,
                           source: InitialPairSource, streams, gate_mode: str = "as_written",
                           temperature: float = 1.0) -> list[Triple]:
    """One triple per prompt: a rollout best/worst pair or an initial pair.

    ``streams(index)`` returns the prompt's generator. Each prompt draws its
    gate uniform first, then the uniforms that drive its K rollouts.
    """
    if not items:
        raise ValueError("prompts must be non-empty")
    if K < 2:
        raise ValueError("K must be >= 2")
    task = verifier.task
    gates, uniforms = [], []
    for it in items:
        rng = streams(it.index)
        gates.append(float(rng.random()))
        uniforms.append(rng.random((K, task.max_len)))
    samples = sample_batch(policy, [it.prompt for it in items], K, temperature,
                           task.max_len, uniforms, task.vocab)
    use_rollout = [gate_selects_rollout(u, eps, gate_mode) for u in gates]
    need_initial = [it for it, r in zip(items, use_rollout) if not r]
    initial_losers = dict(zip((it.index for it in need_initial), source.losers(need_initial)))

    batch = []
    for it, ys, rollout in zip(items, samples, use_rollout):
        if rollout:
            scored = [ScoredResponse(y, verifier.score(it.prompt, y), i)
                      for i, y in enumerate(ys)]
            y_w, y_l, _ = select_pair(scored)
            t = Triple(it.prompt, y_w, y_l, "rollout")
        else:
            t = Triple(it.prompt, it.answer, initial_losers[it.index], "initial")
        t.winner_score = verifier.score(it.prompt, t.winner)
        t.loser_score = verifier.score(it.prompt, t.loser)
        batch.append(t)
    return batch


# ---------------------------------------------------------------------------
# updates

@dataclass
class IterationState:
    n: int
    policy: PolicyParams
    reference: PolicyParams
    init: PolicyParams
    opt: OptimizerState
    root: int


def _zero_moments(opt: OptimizerState, groups) -> OptimizerState:
    def zero(name, arr):
        return np.zeros_like(arr) if TENSOR_GROUP[name] in groups else arr.copy()
    return replace(opt, first_moment=opt.first_moment.map(zero),
                   second_moment=opt.second_moment.map(zero))


def replay_step(state: IterationState, schedule: ScheduleState, batch: list[Triple],
                loss_spec: LossSpec, reset_spec: ResetSpec | None, bos_id: int,
                ref_refresh: str = "per_replay", reset_optimizer_state: bool = False):
    """Reset, one optimizer step on the hybrid loss, optional reference refresh."""
    if not batch:
        raise ValueError("transition batch is empty")
    policy, opt = state.policy, state.opt
    if reset_spec is not None:
        policy = shrink_perturb(policy, state.init, reset_spec)
        if reset_optimizer_state:
            opt = _zero_moments(opt, reset_spec.groups)
    spec = replace(loss_spec, kind="hybrid", lam=schedule.lam)
    reference = state.reference
    try:
        value, g = grad(policy, lambda p: compute_loss(spec, p, reference, batch, bos_id))
    except FloatingPointError as exc:
        raise RuntimeError(f"iteration {state.n} replay {schedule.replay_index}: {exc}") from exc
    policy, opt = adamw_step(policy, g, opt)
    if not policy.is_finite():
        raise RuntimeError(f"iteration {state.n} replay {schedule.replay_index}: "
                           "parameters became non-finite")
    if ref_refresh == "per_replay":
        reference = policy.copy()
    return replace(state, policy=policy, reference=reference, opt=opt), value


def hybrid_gradient(policy, reference, batch, loss_spec: LossSpec, lam: float, bos_id: int):
    """Raw (unpreconditioned) gradient of the hybrid loss; for inspection."""
    spec = replace(loss_spec, kind="hybrid", lam=lam)
    value = compute_loss(spec, policy, reference, batch, bos_id)
    return logprob_backward(policy, value.terms.prompts, value.terms.responses,
                            value.terms.weights, bos_id)


# ---------------------------------------------------------------------------
# full runs

@dataclass(frozen=True)
class Plan:
    """Effective loop settings once the run mode is applied."""
    L: int
    reset: ResetSpec | None
    gate_mode: str
    eps_init: float
    lambda_init: float
    eps_kind: str
    lambda_kind: str
    ref_refresh: str
    rounds: int = 1


def plan_for(cfg: RunConfig) -> Plan:
    if cfg.mode in ("base", "iter_n"):
        # plain on-policy preference optimization: one update per batch,
        # rollout pairs only, no SFT term, no reset
        rounds = cfg.iter_rounds if cfg.mode == "iter_n" else 1
        return Plan(1, None, "prob_rollout", 1.0, 0.0, "constant", "constant",
                    "per_iteration", rounds)
    return Plan(cfg.L, ResetSpec(cfg.alpha, resolve_groups(cfg.reset_groups)), cfg.gate_mode,
                cfg.eps_init, cfg.lambda_init, cfg.eps_schedule or cfg.schedule,
                cfg.lambda_schedule or cfg.schedule, cfg.ref_refresh)


def load_records(cfg: RunConfig):
    """(train, eval) records. Generated data holds out ``eval_size`` extra prompts;
    a dataset file holds out its last ``eval_size`` records."""
    if cfg.dataset.path:
        records = read_jsonl(cfg.dataset.path)
        if len(records) <= cfg.eval_size:
            raise ConfigError(f"dataset has {len(records)} records, needs more than "
                              f"eval_size={cfg.eval_size}", "dataset.path")
        return records[:-cfg.eval_size], records[-cfg.eval_size:]
    records = generate_dataset(cfg.task, cfg.dataset.size + cfg.eval_size, cfg.dataset.seed)
    return records[:cfg.dataset.size], records[cfg.dataset.size:]


def pretrain_pool(cfg: RunConfig, used_prompts) -> list[DatasetRecord]:
    """Prompts of the task's space that appear in neither training nor eval data."""
    used = set(used_prompts)
    space = prompt_space(cfg.task, cfg.dataset.size + cfg.eval_size)
    return [DatasetRecord(p, solve(cfg.task, p)) for p in space if p not in used]


def pretrain_policy(params: PolicyParams, task: Task, pool, steps: int, lr: float,
                    batch_size: int, seed: int) -> PolicyParams:
    """Seeded SFT warm start producing the initial policy of a run."""
    if steps == 0:
        return params
    if not pool:
        raise ConfigError("no prompts left for pretraining", "pretrain.steps")
    rng = np.random.default_rng([seed, 0xBA5E])
    opt = OptimizerState.create(params.dims, lr, 0.1, steps, 0.0)
    spec = LossSpec("sft")
    bos = task.vocab.bos_id
    for _ in range(steps):
        idx = rng.choice(len(pool), size=min(batch_size, len(pool)), replace=False)
        batch = []
        for i in idx:
            answer = task.encode_answer(pool[i].answer)
            batch.append(Triple(task.encode_prompt(pool[i].prompt), answer, answer))
        _, g = grad(params, lambda p: compute_loss(spec, p, None, batch, bos))
        params, opt = adamw_step(params, g, opt)
    return params


def batch_schedule(n_items: int, batch_size: int, n_batches: int, seed: int) -> list[list[int]]:
    """Index batches over epochs; each epoch is a fresh seeded permutation."""
    order: list[int] = []
    epoch = 0
    while len(order) < n_batches * batch_size:
        order.extend(np.random.default_rng([seed, 0xDA7A, epoch]).permutation(n_items).tolist())
        epoch += 1
    return [order[i * batch_size:(i + 1) * batch_size] for i in range(n_batches)]


@dataclass
class RunResult:
    params: PolicyParams
    rows: list = field(default_factory=list)
    init: PolicyParams | None = None
    batches: list = field(default_factory=list)

    @property
    def final_pass_at_1(self) -> float | None:
        evals = [r["pass_at_1_eval"] for r in self.rows if r["pass_at_1_eval"] != ""]
        return evals[-1] if evals else None


class TrainingRun:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.task: Task = make_task(cfg.task)
        self.verifier = RewardVerifier(self.task, cfg.partial_credit)
        self.plan = plan_for(cfg)
        train, evals = load_records(cfg)
        self.pool = (pretrain_pool(cfg, [r.prompt for r in train + evals])
                     if cfg.pretrain.steps else [])
        self.items = [self._item(i, r) for i, r in enumerate(train)]
        self.eval_set = [(self.task.encode_prompt(r.prompt), self.task.encode_answer(r.answer))
                         for r in evals]
        V = len(self.task.vocab)
        n = cfg.model.n or self.task.min_window
        self.dims = (V, cfg.model.d, cfg.model.d_h, n)
        source = cfg.initial_source
        if source == "auto":
            has_rejected = all(it.record.rejected is not None for it in self.items)
            source = "dataset_rejected" if has_rejected else "init_rollout"
        self.source_mode = source

    def initial_policy(self) -> PolicyParams:
        p = self.cfg.pretrain
        return pretrain_policy(init_params(self.cfg.seed, self.dims), self.task, self.pool,
                               p.steps, p.lr, p.batch_size, self.cfg.seed)

    def _item(self, i, record):
        return PromptItem(i, self.task.encode_prompt(record.prompt),
                          self.task.encode_answer(record.answer), record)

    def run(self, prime_repeats: int = 1) -> RunResult:
        cfg, plan = self.cfg, self.plan
        if prime_repeats < 1:
            raise ValueError("prime_repeats must be >= 1")
        init = self.initial_policy()
        total_steps = plan.rounds * cfg.N * plan.L + (prime_repeats - 1 if cfg.N else 0)
        opt = OptimizerState.create(self.dims, cfg.optimizer.lr, cfg.optimizer.warmup_frac,
                                    total_steps, cfg.optimizer.weight_decay)
        state = IterationState(0, init.copy(), init.copy(), init, opt, cfg.seed)
        source = InitialPairSource(self.source_mode, init, self.verifier, cfg.K,
                                   cfg.temperature, cfg.seed)
        batches = batch_schedule(len(self.items), cfg.effective_batch_size, cfg.N, cfg.seed)
        rows = []
        for r in range(plan.rounds):
            for n, idx in enumerate(batches, 1):
                g = r * cfg.N + n
                state = replace(state, n=g)
                repeats = prime_repeats if g == 1 else 1
                state, new_rows = self.run_iteration(state, [self.items[i] for i in idx],
                                                     source, repeats)
                rows.extend(new_rows)
                rows.append(self._eval_row(g, state.policy))
        return RunResult(state.policy, rows, init, batches)

    def run_iteration(self, state: IterationState, items, source, repeats: int = 1):
        """L replays over one prompt batch; ``repeats`` > 1 reuses the first
        transition batch that many times (heavy priming)."""
        cfg, plan = self.cfg, self.plan
        rows = []
        for ell in range(1, plan.L + 1):
            sched = ScheduleState.at(ell, plan.L, plan.eps_init, plan.lambda_init,
                                     plan.eps_kind, plan.lambda_kind)
            batch = build_transition_batch(
                state.policy, items, self.verifier, cfg.K, sched.eps, source,
                lambda i, n=state.n, ell=ell: prompt_stream(state.root, n, ell, i),
                plan.gate_mode, cfg.temperature)
            stats = _batch_stats(batch)
            if cfg.drop_degenerate:
                batch = [t for t in batch if not t.degenerate]
            for rep in range(repeats):
                value = None
                if batch:
                    state, value = replay_step(
                        state, sched, batch, cfg.loss_spec, plan.reset,
                        self.task.vocab.bos_id, plan.ref_refresh, cfg.reset_optimizer_state)
                rows.append(self._replay_row(state.n, ell if repeats == 1 else rep + 1,
                                             sched, value, stats))
        if plan.ref_refresh == "per_iteration":
            state = replace(state, reference=state.policy.copy())
        return state, rows

    def _replay_row(self, n, ell, sched, value: LossValue | None, stats):
        pref_kind = self.cfg.loss.kind
        row = dict.fromkeys(METRIC_FIELDS, "")
        row.update(iteration=n, replay=ell, eps=sched.eps, **{"lambda": sched.lam}, **stats)
        if value is not None:
            row.update(loss_total=value.scalar, loss_sft=value.components["sft"],
                       loss_pref=value.components[pref_kind])
        return row

    def _eval_row(self, n, policy):
        row = dict.fromkeys(METRIC_FIELDS, "")
        row.update(iteration=n, pass_at_1_eval=pass_at_1(policy, self.eval_set, self.verifier))
        log.info("iteration %d pass@1 %.4f", n, row["pass_at_1_eval"])
        return row


def _batch_stats(batch: list[Triple]) -> dict:
    B = len(batch)
    return {
        "rollout_fraction": sum(t.origin == "rollout" for t in batch) / B,
        "degenerate_pairs": sum(t.degenerate for t in batch),
        "mean_reward_winner": math.fsum(t.winner_score for t in batch) / B,
        "mean_reward_loser": math.fsum(t.loser_score for t in batch) / B,
    }


def run_training(cfg: RunConfig, prime_repeats: int = 1) -> RunResult:
    return TrainingRun(cfg).run(prime_repeats)
