import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_params
from resetreplay.errors import ConfigError
from resetreplay.policy import TENSOR_GROUP, init_params
from resetreplay.reset import SELECTORS, ResetSpec, resolve_groups, shrink_perturb

ALL = frozenset({"embedding", "hidden", "output"})


def in_groups(groups):
    return [n for n, g in TENSOR_GROUP.items() if g in groups]


def out_groups(groups):
    return [n for n, g in TENSOR_GROUP.items() if g not in groups]


class TestShrinkPerturb:
    def setup_method(self):
        self.cur, self.init = random_params(1), random_params(2)

    @pytest.mark.parametrize("selector", list(SELECTORS))
    def test_alpha_one_identity(self, selector):
        out = shrink_perturb(self.cur, self.init, ResetSpec(1.0, resolve_groups(selector)))
        assert np.array_equal(out.flat(), self.cur.flat())

    @pytest.mark.parametrize("selector", list(SELECTORS))
    def test_alpha_zero_restores_init(self, selector):
        groups = resolve_groups(selector)
        out = shrink_perturb(self.cur, self.init, ResetSpec(0.0, groups))
        for name in in_groups(groups):
            assert np.array_equal(getattr(out, name), getattr(self.init, name))
        for name in out_groups(groups):
            assert np.array_equal(getattr(out, name), getattr(self.cur, name))

    def test_half_on_output(self):
        out = shrink_perturb(self.cur, self.init, ResetSpec())
        mean = (self.cur.out_w + self.init.out_w) / 2
        assert np.max(np.abs(out.out_w - mean)) <= 1e-15
        assert np.array_equal(out.embedding, self.cur.embedding)
        assert np.array_equal(out.hidden_w, self.cur.hidden_w)

    def test_does_not_mutate_inputs(self):
        before = self.cur.flat().copy(), self.init.flat().copy()
        shrink_perturb(self.cur, self.init, ResetSpec(0.3, ALL))
        assert np.array_equal(self.cur.flat(), before[0])
        assert np.array_equal(self.init.flat(), before[1])

    def test_linear_in_alpha(self):
        spec = lambda a: ResetSpec(a, ALL)
        for a in (0.0, 0.25, 0.5, 0.75, 1.0):
            out = shrink_perturb(self.cur, self.init, spec(a)).flat()
            expected = a * self.cur.flat() + (1 - a) * self.init.flat()
            assert np.allclose(out, expected, rtol=0, atol=1e-15)

    def test_dims_mismatch(self):
        with pytest.raises(ValueError):
            shrink_perturb(self.cur, init_params(0, (6, 3, 4, 2)), ResetSpec())

    @settings(max_examples=60, deadline=None)
    @given(alpha=st.floats(0.0, 1.0), selector=st.sampled_from(sorted(SELECTORS)),
           seed=st.integers(0, 10_000))
    def test_composition(self, alpha, selector, seed):
        cur, init = random_params(seed), random_params(seed + 1)
        groups = resolve_groups(selector)
        twice = shrink_perturb(shrink_perturb(cur, init, ResetSpec(alpha, groups)), init,
                               ResetSpec(alpha, groups))
        once = shrink_perturb(cur, init, ResetSpec(alpha * alpha, groups))
        for name in in_groups(groups):
            assert np.allclose(getattr(twice, name), getattr(once, name), rtol=0, atol=1e-12)
        for name in out_groups(groups):
            assert np.array_equal(getattr(twice, name), getattr(cur, name))


class TestGroups:
    def test_selectors(self):
        assert resolve_groups("output") == {"output"}
        assert resolve_groups("hidden+output") == {"hidden", "output"}
        assert resolve_groups("all") == ALL

    def test_unknown(self):
        with pytest.raises(ConfigError) as err:
            resolve_groups("everything")
        assert err.value.path == "reset_groups"

    def test_spec_validation(self):
        for kwargs in ({"alpha": 1.5}, {"alpha": -0.1}, {"groups": frozenset()},
                       {"groups": frozenset({"decoder"})}):
            with pytest.raises(ConfigError):
                ResetSpec(**kwargs)
