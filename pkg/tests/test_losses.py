import math

import numpy as np
import pytest

from helpers import SMALL_DIMS, fd_grad, random_batch, random_params, rel_err
from resetreplay.losses import (DEFAULT_HPARAMS, LossSpec, LossValue, SeqWeights, Triple,
                                compute_loss, dpo_loss, hybrid_loss, ipo_loss, kto_loss,
                                log_sigmoid, rdpo_loss, sft_loss, simpo_loss, zero_margin_value)
from resetreplay.policy import grad, sequence_logprob, zeros_like_params

BOS = 0
V = SMALL_DIMS[0]

SPECS = {
    "sft": LossSpec("sft"),
    "dpo": LossSpec("dpo", beta=0.5),
    "simpo": LossSpec("simpo"),
    "ipo": LossSpec("ipo"),
    "kto": LossSpec("kto", beta=0.7),
    "rdpo": LossSpec("rdpo", beta=0.5),
    "hybrid": LossSpec("hybrid", inner="dpo", beta=0.5, lam=0.3),
}


def softplus_neg(z):
    # -log sigmoid(z) written directly
    return math.log1p(math.exp(-z)) if z > 0 else -z + math.log1p(math.exp(z))


class TestGradients:
    @pytest.mark.parametrize("kind", list(SPECS))
    def test_finite_differences(self, kind):
        spec = SPECS[kind]
        rng = np.random.default_rng(list(SPECS).index(kind))
        for k in range(20):
            policy = random_params(k)
            reference = random_params(k + 100)
            batch = random_batch(rng, V, BOS, n_pairs=3, allow_equal=True)
            f = lambda p: compute_loss(spec, p, reference, batch, BOS)
            _, g = grad(policy, f)
            num = fd_grad(lambda p: f(p).scalar, policy)
            if all(t.winner == t.loser for t in batch) and kind != "sft":
                # true gradient is zero; relative error would only measure noise
                assert np.max(np.abs(g.flat() - num)) < 1e-8, (kind, k)
            else:
                assert rel_err(g.flat(), num) < 1e-4, (kind, k)

    def test_degenerate_pair_zero_gradient(self):
        policy, reference = random_params(1), random_params(2)
        batch = [Triple([1, 2], [3, 4], [3, 4])]
        for kind in ("dpo", "simpo", "ipo", "rdpo"):
            value, g = grad(policy, lambda p: compute_loss(SPECS[kind], p, reference, batch, BOS))
            assert not np.any(g.flat())
            assert value.degenerate_pairs == 1
        value = dpo_loss(policy, reference, batch, 0.01, BOS)
        assert value.scalar == pytest.approx(math.log(2), abs=1e-15)


class TestSFT:
    def test_zero_params_uniform(self):
        z = zeros_like_params(SMALL_DIMS)
        for m in (1, 3):
            batch = [Triple([1], [2] * m, [3]), Triple([4, 4], [1] * m, [2])]
            assert sft_loss(z, batch, BOS).scalar == m * math.log(V)

    def test_single_triple(self):
        p = random_params(3)
        t = Triple([1, 2], [3, 1], [4])
        assert sft_loss(p, [t], BOS).scalar == -sequence_logprob(p, t.prompt, t.winner, BOS)

    def test_mean_of_items(self):
        p = random_params(4)
        batch = random_batch(np.random.default_rng(0), V, BOS, n_pairs=7)
        per = [sft_loss(p, [t], BOS).scalar for t in batch]
        assert abs(sft_loss(p, batch, BOS).scalar - math.fsum(per) / len(per)) < 1e-12

    def test_empty_batch(self):
        with pytest.raises(ValueError):
            sft_loss(random_params(0), [], BOS)


class TestDPO:
    def test_policy_equals_reference(self):
        p = random_params(5)
        for seed in range(5):
            batch = random_batch(np.random.default_rng(seed), V, BOS, n_pairs=4)
            assert abs(dpo_loss(p, p.copy(), batch, 0.01, BOS).scalar - math.log(2)) < 1e-9

    def test_formula_oracle(self):
        policy, reference = random_params(6), random_params(7)
        batch = [Triple([1, 2], [3, 1], [4, 4, 1]), Triple([3], [2], [1])]
        beta = 0.01
        vals = []
        for t in batch:
            m = (sequence_logprob(policy, t.prompt, t.winner, BOS)
                 - sequence_logprob(reference, t.prompt, t.winner, BOS)
                 - sequence_logprob(policy, t.prompt, t.loser, BOS)
                 + sequence_logprob(reference, t.prompt, t.loser, BOS))
            vals.append(softplus_neg(beta * m))
        got = dpo_loss(policy, reference, batch, beta, BOS).scalar
        assert abs(got - sum(vals) / 2) < 1e-10

    def test_large_margin_limit(self):
        reference = random_params(8)
        batch = [Triple([1], [2], [3])]
        values = []
        for t in (0.0, 10.0, 100.0, 1000.0, 10000.0):
            policy = reference.copy()
            policy.out_b[2] += t
            values.append(dpo_loss(policy, reference, batch, 0.01, BOS).scalar)
        assert all(a > b for a, b in zip(values, values[1:]))
        assert values[-1] < 1e-12

    def test_uniform_out_b_shift(self):
        policy, reference = random_params(9), random_params(10)
        batch = random_batch(np.random.default_rng(1), V, BOS, n_pairs=5)
        base = dpo_loss(policy, reference, batch, 0.5, BOS).scalar
        p2, r2 = policy.copy(), reference.copy()
        p2.out_b += 3.7
        r2.out_b += 3.7
        assert abs(dpo_loss(p2, r2, batch, 0.5, BOS).scalar - base) < 1e-9

    def test_shared_logprob_offset(self, monkeypatch):
        # any g(x, y) added to both models' log-probs cancels in the log-ratios
        import resetreplay.losses as L
        policy, reference = random_params(9), random_params(10)
        batch = random_batch(np.random.default_rng(1), V, BOS, n_pairs=5)
        base = dpo_loss(policy, reference, batch, 0.5, BOS).scalar
        plain = L.batch_logprobs

        def shifted(params, prompts, responses, bos_id):
            g = np.array([math.sin(sum(x) + 3 * sum(y)) * 5 + len(y) for x, y in
                          zip(prompts, responses)])
            return plain(params, prompts, responses, bos_id) + g

        monkeypatch.setattr(L, "batch_logprobs", shifted)
        assert abs(dpo_loss(policy, reference, batch, 0.5, BOS).scalar - base) < 1e-9


class TestSimPO:
    def test_symmetric_case(self):
        z = zeros_like_params(SMALL_DIMS)
        batch = [Triple([1], [2, 3], [4]), Triple([2], [1], [3, 3, 3])]
        assert simpo_loss(z, batch, 2.0, 0.0, BOS).scalar == pytest.approx(math.log(2),
                                                                            abs=1e-15)

    def test_gamma_monotone(self):
        p = random_params(11)
        batch = random_batch(np.random.default_rng(3), V, BOS)
        vals = [simpo_loss(p, batch, 2.0, g, BOS).scalar for g in (0.0, 0.3, 0.55, 1.0, 2.0)]
        assert all(a < b for a, b in zip(vals, vals[1:]))

    def test_formula_oracle(self):
        p = random_params(12)
        batch = [Triple([1], [2, 3, 1], [4]), Triple([3, 3], [1], [2, 1])]
        beta, gamma = 2.0, 0.55
        vals = []
        for t in batch:
            z = (beta * (sequence_logprob(p, t.prompt, t.winner, BOS) / len(t.winner)
                         - sequence_logprob(p, t.prompt, t.loser, BOS) / len(t.loser)) - gamma)
            vals.append(softplus_neg(z))
        assert abs(simpo_loss(p, batch, beta, gamma, BOS).scalar - sum(vals) / 2) < 1e-10

    def test_zero_length(self):
        with pytest.raises(ValueError):
            simpo_loss(random_params(0), [Triple([1], [], [2])], 2.0, 0.5, BOS)


class TestOtherPreferenceLosses:
    def ratios(self, policy, reference, t):
        r = lambda y: (sequence_logprob(policy, t.prompt, y, BOS)
                       - sequence_logprob(reference, t.prompt, y, BOS))
        return r(t.winner), r(t.loser)

    def test_zero_margin_closed_forms(self):
        p = random_params(13)
        batch = random_batch(np.random.default_rng(4), V, BOS, n_pairs=4)
        for tau in (0.1, 0.5, 2.0):
            assert ipo_loss(p, p, batch, tau, BOS).scalar == pytest.approx(1 / (4 * tau**2),
                                                                           rel=1e-12)
        for gamma in (0.5, 1.0):
            assert kto_loss(p, p, batch, 0.01, gamma, BOS).scalar == pytest.approx(gamma / 2,
                                                                                  rel=1e-12)
        assert zero_margin_value(LossSpec("ipo")) == 1 / (4 * 0.25)
        assert zero_margin_value(LossSpec("kto")) == 0.5
        assert zero_margin_value(LossSpec("dpo")) == math.log(2)

    def test_ipo_oracle(self):
        policy, reference = random_params(14), random_params(15)
        batch = [Triple([1, 2], [3], [4, 1]), Triple([2], [1, 1], [3])]
        vals = []
        for t in batch:
            rw, rl = self.ratios(policy, reference, t)
            vals.append((rw - rl - 1 / (2 * 0.5)) ** 2)
        assert abs(ipo_loss(policy, reference, batch, 0.5, BOS).scalar - sum(vals) / 2) < 1e-10

    def test_kto_oracle(self):
        policy, reference = random_params(16), random_params(17)
        batch = [Triple([1, 2], [3], [4, 1]), Triple([2], [1, 1], [3]), Triple([4], [2], [2, 3])]
        beta, gamma = 0.7, 1.0
        rs = [self.ratios(policy, reference, t) for t in batch]
        kl_w = max(0.0, sum(r[0] for r in rs) / 3)
        kl_l = max(0.0, sum(r[1] for r in rs) / 3)
        sig = lambda z: 1 / (1 + math.exp(-z))
        total = sum((1 - sig(beta * (rw - kl_l))) + (1 - sig(beta * (kl_w - rl))) for rw, rl in rs)
        expected = gamma * total / (2 * 3)
        assert abs(kto_loss(policy, reference, batch, beta, gamma, BOS).scalar - expected) < 1e-10

    def test_rdpo_oracle(self):
        policy, reference = random_params(18), random_params(19)
        batch = [Triple([1, 2], [3], [4, 1, 1]), Triple([2], [1, 1], [3])]
        beta, gamma = 0.01, 0.6
        vals = []
        for t in batch:
            rw, rl = self.ratios(policy, reference, t)
            vals.append(softplus_neg(beta * (rw - rl) - gamma * (len(t.winner) - len(t.loser))))
        got = rdpo_loss(policy, reference, batch, beta, gamma, BOS).scalar
        assert abs(got - sum(vals) / 2) < 1e-10

    def test_rdpo_favours_shorter_winner(self):
        p = random_params(20)
        short = [Triple([1], [2], [3, 3, 3])]
        long = [Triple([1], [3, 3, 3], [2])]
        assert rdpo_loss(p, p, short, 0.01, 0.6, BOS).scalar < math.log(2)
        assert rdpo_loss(p, p, long, 0.01, 0.6, BOS).scalar > math.log(2)


class TestHybrid:
    def lv(self, value, kind):
        return LossValue(value, {kind: value}, SeqWeights(bos_id=BOS))

    def test_endpoints(self):
        sft, pref = self.lv(2.0, "sft"), self.lv(1.0, "dpo")
        assert hybrid_loss(0.0, sft, pref).scalar == 1.0
        assert hybrid_loss(1.0, sft, pref).scalar == 2.0
        assert hybrid_loss(0.25, sft, pref).scalar == 1.25

    def test_out_of_range(self):
        sft, pref = self.lv(2.0, "sft"), self.lv(1.0, "dpo")
        for lam in (-0.1, 1.5):
            with pytest.raises(ValueError):
                hybrid_loss(lam, sft, pref)

    def test_affine_in_lambda(self):
        policy, reference = random_params(21), random_params(22)
        batch = random_batch(np.random.default_rng(5), V, BOS)
        f = lambda lam: compute_loss(LossSpec("hybrid", inner="dpo", lam=lam), policy,
                                     reference, batch, BOS).scalar
        v0, v1 = f(0.0), f(1.0)
        assert f(0.0) == dpo_loss(policy, reference, batch, 0.01, BOS).scalar
        assert f(1.0) == sft_loss(policy, batch, BOS).scalar
        for lam in np.linspace(0, 1, 11):
            assert abs(f(lam) - ((1 - lam) * v0 + lam * v1)) < 1e-12


class TestBatchOrder:
    @pytest.mark.parametrize("kind", list(SPECS))
    def test_permutation_invariance(self, kind):
        policy, reference = random_params(23), random_params(24)
        rng = np.random.default_rng(6)
        batch = random_batch(rng, V, BOS, n_pairs=6, allow_equal=True)
        base = compute_loss(SPECS[kind], policy, reference, batch, BOS).scalar
        for _ in range(5):
            perm = [batch[i] for i in rng.permutation(len(batch))]
            assert abs(compute_loss(SPECS[kind], policy, reference, perm, BOS).scalar
                       - base) < 1e-12


class TestLossSpec:
    def test_defaults(self):
        assert (LossSpec("dpo").beta, LossSpec("simpo").beta, LossSpec("simpo").gamma) == \
            (0.01, 2.0, 0.55)
        assert LossSpec("ipo").gamma == 0.5
        assert (LossSpec("kto").beta, LossSpec("kto").gamma) == (0.01, 1.0)
        assert (LossSpec("rdpo").beta, LossSpec("rdpo").gamma) == DEFAULT_HPARAMS["rdpo"]

    def test_invalid(self):
        for kwargs in ({"kind": "ppo"}, {"kind": "hybrid"}, {"kind": "dpo", "lam": 2.0},
                       {"kind": "dpo", "beta": -1.0}):
            with pytest.raises(ValueError):
                LossSpec(**kwargs)

    def test_log_sigmoid_stable(self):
        assert np.isfinite(log_sigmoid(np.array([-1e4, 0.0, 1e4]))).all()
        assert log_sigmoid(0.0) == pytest.approx(-math.log(2))
