from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blast.errors import InputError
from blast.kernels import rng_stream
from blast.model import (
    BlockShrinkage,
    Dataset,
    ModelState,
    Partition,
    compose_beta,
    draw_contrast,
    draw_variance,
    draw_w_informative,
    draw_w_noninformative,
    stack_studies,
    variance_posterior,
)


def make_state(p, nu=None, **kw):
    st_ = ModelState.initial(p, 0)
    if nu is not None:
        for b, v in nu.items():
            st_.shrinkage[b] = BlockShrinkage(np.asarray(v, float), b)
    for k, v in kw.items():
        setattr(st_, k, np.asarray(v, float) if isinstance(v, (list, np.ndarray)) else v)
    return st_


def repeat(fn, n, seed):
    rng = rng_stream(seed)
    return np.array([fn(rng) for _ in range(n)])


class TestStackStudies:
    def test_row_counts(self):
        r = np.random.default_rng(0)
        studies = [Dataset(r.standard_normal((150, 200)), r.standard_normal(150), k, "source") for k in (1, 2)]
        out = stack_studies(studies, {1, 2})
        assert (out.n, out.p) == (300, 200)

    def test_ascending_order_and_summed_statistics(self):
        a = Dataset(np.ones((2, 2)), [1.0, 2.0], 2, "source")
        b = Dataset(2 * np.ones((1, 2)), [3.0], 1, "source")
        out = stack_studies([a, b], [2, 1])
        np.testing.assert_array_equal(out.outcome, [3.0, 1.0, 2.0])
        np.testing.assert_allclose(out.gram, out.design.T @ out.design)
        np.testing.assert_allclose(out.xty, out.design.T @ out.outcome)

    def test_empty_and_single(self):
        a = Dataset(np.ones((2, 3)), [1.0, 2.0], 1, "source")
        assert stack_studies([a], set()).design.shape == (0, 3)
        assert stack_studies([a], {1}) is a

    def test_mismatched_p(self):
        a = Dataset(np.ones((2, 3)), [1.0, 2.0], 1, "source")
        b = Dataset(np.ones((2, 2)), [1.0, 2.0], 2, "source")
        with pytest.raises(InputError):
            stack_studies([a, b], {1, 2})

    def test_unknown_id(self):
        a = Dataset(np.ones((2, 3)), [1.0, 2.0], 1, "source")
        with pytest.raises(InputError):
            stack_studies([a], {5})


class TestDataset:
    def test_row_mismatch(self):
        with pytest.raises(InputError):
            Dataset(np.ones((3, 2)), np.ones(2))

    def test_zero_columns_rejected(self):
        with pytest.raises(InputError):
            Dataset(np.ones((3, 0)), np.ones(3))

    def test_partition_disjoint(self):
        with pytest.raises(InputError):
            Partition(frozenset({1}), frozenset({1, 2}))
        part = Partition.from_inclusion([1, 0, 1])
        assert part.informative_ids == {1, 3} and part.noninformative_ids == {2}


class TestDrawInformative:
    def test_one_dimensional_hand_case(self):
        state = make_state(1)
        target = Dataset([[0.0]], [0.0])
        inf = Dataset([[2.0]], [4.0], 1, "source")
        draws = repeat(lambda r: draw_w_informative(state, target, inf, r), 100_000, 1)[:, 0]
        se = np.sqrt(0.2 / draws.size)
        assert abs(draws.mean() - 1.6) < 3 * se
        assert abs(draws.var() - 0.2) < 0.01

    def test_zero_outcomes_centered(self):
        r = np.random.default_rng(3)
        state = make_state(2)
        target = Dataset(r.standard_normal((4, 2)), np.zeros(4))
        inf = Dataset(r.standard_normal((5, 2)), np.zeros(5), 1, "source")
        draws = repeat(lambda g: draw_w_informative(state, target, inf, g), 20_000, 2)
        se = draws.std(axis=0) / np.sqrt(draws.shape[0])
        assert np.all(np.abs(draws.mean(axis=0)) < 3 * se)

    @pytest.mark.parametrize("method", ["fast", "direct"])
    def test_moments_match_dense_solve(self, method):
        r = np.random.default_rng(17)
        p = 3
        XA, yA = r.standard_normal((5, p)), r.standard_normal(5)
        X0, y0 = r.standard_normal((4, p)), r.standard_normal(4)
        nu = r.uniform(0.5, 2.0, p)
        delta = r.standard_normal(p) * 0.3
        state = make_state(p, {"informative": nu}, contrast=delta, var_informative=0.7, var_target=1.6)
        precision = (XA.T @ XA + np.diag(1 / nu)) / 0.7 + X0.T @ X0 / 1.6
        cov = np.linalg.inv(precision)
        mean = cov @ (XA.T @ yA / 0.7 + X0.T @ (y0 - X0 @ delta) / 1.6)
        target = Dataset(X0, y0)
        inf = Dataset(XA, yA, 1, "source")
        draws = repeat(lambda g: draw_w_informative(state, target, inf, g, method), 100_000, 4)
        se = np.sqrt(np.diag(cov) / draws.shape[0])
        assert np.all(np.abs(draws.mean(axis=0) - mean) < 3 * se)
        np.testing.assert_allclose(np.cov(draws, rowvar=False), cov, atol=4 * np.sqrt(2 / draws.shape[0]) * np.max(np.diag(cov)))


class TestDrawContrast:
    def test_hand_case(self):
        state = make_state(1, w_informative=[1.0])
        target = Dataset([[1.0]], [3.0])
        draws = repeat(lambda g: draw_contrast(state, target, g), 100_000, 5)[:, 0]
        assert abs(draws.mean() - 1.0) < 3 * np.sqrt(0.5 / draws.size)
        assert abs(draws.var() - 0.5) < 0.01

    def test_zero_residual(self):
        r = np.random.default_rng(2)
        w = r.standard_normal(3)
        X = r.standard_normal((6, 3))
        state = make_state(3, w_informative=w)
        draws = repeat(lambda g: draw_contrast(state, Dataset(X, X @ w), g), 20_000, 6)
        se = draws.std(axis=0) / np.sqrt(draws.shape[0])
        assert np.all(np.abs(draws.mean(axis=0)) < 3 * se)

    def test_moments_match_dense_solve(self):
        r = np.random.default_rng(8)
        X, y = r.standard_normal((6, 3)), r.standard_normal(6)
        w = r.standard_normal(3)
        nu = np.array([0.5, 1.0, 2.0])
        state = make_state(3, {"contrast": nu}, w_informative=w, var_target=1.3)
        cov = 1.3 * np.linalg.inv(X.T @ X + np.diag(1 / nu))
        mean = cov @ (X.T @ (y - X @ w)) / 1.3
        draws = repeat(lambda g: draw_contrast(state, Dataset(X, y), g), 100_000, 7)
        assert np.all(np.abs(draws.mean(axis=0) - mean) < 3 * np.sqrt(np.diag(cov) / draws.shape[0]))


class TestDrawNoninformative:
    def test_empty_block_is_prior(self):
        state = make_state(2, {"noninformative": [4.0, 0.25]}, var_noninformative=2.0)
        draws = repeat(lambda g: draw_w_noninformative(state, Dataset.empty(2), g), 50_000, 8)
        np.testing.assert_allclose(draws.var(axis=0), [8.0, 0.5], rtol=0.03)

    def test_one_dimensional_hand_case(self):
        state = make_state(1, {"noninformative": [0.5]})
        data = Dataset([[1.0], [2.0]], [1.0, 3.0], 1, "source")
        draws = repeat(lambda g: draw_w_noninformative(state, data, g), 100_000, 9)[:, 0]
        mean = 7.0 / (5.0 + 2.0)
        assert abs(draws.mean() - mean) < 3 * np.sqrt(1 / 7 / draws.size)

    def test_row_permutation_invariance(self):
        r = np.random.default_rng(4)
        X, y = r.standard_normal((8, 3)), r.standard_normal(8)
        perm = r.permutation(8)
        state = make_state(3)
        a = draw_w_noninformative(state, Dataset(X, y, 1, "source"), rng_stream(3), "direct")
        b = draw_w_noninformative(state, Dataset(X[perm], y[perm], 1, "source"), rng_stream(3), "direct")
        np.testing.assert_allclose(a, b, rtol=1e-10)


class TestVariances:
    def test_no_data_target(self):
        state = make_state(1)
        shape, scale = variance_posterior("target", state, Dataset.empty(1, 0, "target"))
        assert (shape, scale) == (1.0, 0.5)

    def test_perfect_fit(self):
        X = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        state = make_state(2)
        shape, scale = variance_posterior("informative", state, Dataset(X, np.zeros(3), 1, "source"), prior=(1.0, 1.0))
        assert (shape, scale) == (1.0 + 2.5, 1.0)

    def test_draw_mean(self):
        r = np.random.default_rng(5)
        X, y = r.standard_normal((10, 2)), r.standard_normal(10)
        state = make_state(2, w_informative=[0.3, -0.2], contrast=[0.1, 0.0])
        data = Dataset(X, y)
        shape, scale = variance_posterior("target", state, data)
        draws = repeat(lambda g: draw_variance("target", state, data, g), 200_000, 10)
        assert abs(draws.mean() / (scale / (shape - 1)) - 1) < 0.01

    def test_unknown_block(self):
        with pytest.raises(InputError):
            variance_posterior("bogus", make_state(1), Dataset.empty(1))


class TestComposeBeta:
    @pytest.mark.parametrize(
        "w,delta,expected",
        [([0.5, 0.0], [0.0, 0.0], [0.5, 0.0]), ([0.5, 0.5], [-0.3, 0.0], [0.2, 0.5]), ([1.0, -2.0], [-1.0, 2.0], [0.0, 0.0])],
    )
    def test_examples(self, w, delta, expected):
        np.testing.assert_allclose(compose_beta(make_state(2, w_informative=w, contrast=delta)), expected)

    @settings(max_examples=50, deadline=None)
    @given(
        w=st.lists(st.floats(-1e6, 1e6), min_size=3, max_size=3),
        d=st.lists(st.floats(-1e6, 1e6), min_size=3, max_size=3),
        alpha=st.floats(-100, 100),
    )
    def test_linear(self, w, d, alpha):
        base = compose_beta(make_state(3, w_informative=w, contrast=d))
        scaled = compose_beta(make_state(3, w_informative=alpha * np.array(w), contrast=alpha * np.array(d)))
        np.testing.assert_allclose(scaled, alpha * base, rtol=1e-9, atol=1e-6)


def test_prior_recovery_with_empty_data():
    """All conditionals on 0-row data leave the joint prior invariant."""
    p, a, b = 2, 3.0, 3.0
    nu = {"informative": [1.0, 0.5], "contrast": [2.0, 1.0], "noninformative": [0.3, 1.0]}
    state = make_state(p, nu)
    empty, target = Dataset.empty(p), Dataset.empty(p, 0, "target")
    rng = rng_stream(12)
    T = 40_000
    out = np.empty((T, 6))
    for t in range(T):
        state.w_informative = draw_w_informative(state, target, empty, rng)
        state.contrast = draw_contrast(state, target, rng)
        state.w_noninformative = draw_w_noninformative(state, empty, rng)
        state.var_target = draw_variance("target", state, target, rng, (a, b))
        state.var_informative = draw_variance("informative", state, empty, rng, (a, b))
        state.var_noninformative = draw_variance("noninformative", state, empty, rng, (a, b))
        out[t] = [state.w_informative[0], state.contrast[1], state.w_noninformative[0],
                  state.var_target, state.var_informative, state.var_noninformative]
    var_mean = b / (a - 1)
    np.testing.assert_allclose(out[:, 3:].mean(axis=0), var_mean, rtol=0.05)
    np.testing.assert_allclose(out[:, :3].var(axis=0), var_mean * np.array([1.0, 1.0, 0.3]), rtol=0.1)
    np.testing.assert_allclose(out[:, :3].mean(axis=0), 0.0, atol=0.05)
