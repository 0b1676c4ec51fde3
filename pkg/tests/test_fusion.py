import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import mhan.autodiff as ad
from mhan.fusion import (
    adaptive_fuse,
    fusional_attention,
    init_adaptive_params,
    init_fusional_params,
    init_shared_params,
    shared_matrix_fuse,
)
from synth import fd_check_tensors


def pair(rng, n=3, d=4, trainable=False):
    return (
        ad.Tensor(rng.normal(size=(n, d)), trainable=trainable),
        ad.Tensor(rng.normal(size=(n, d)), trainable=trainable),
    )


class TestAdaptive:
    def test_equal_inputs_pass_through(self, rng):
        params = init_adaptive_params(ad.ParamStore(1), "f", 4)
        hc = ad.Tensor(rng.normal(size=(3, 4)))
        out = adaptive_fuse(hc, ad.const(hc.value.copy()), params)
        np.testing.assert_allclose(out.value, hc.value, atol=1e-12)

    def test_zero_mlp_gives_even_average(self, rng):
        store = ad.ParamStore(1)
        params = init_adaptive_params(store, "f", 4)
        for t in store.params.values():
            t.value = np.zeros_like(t.value)
        hc, ht = pair(rng)
        out = adaptive_fuse(hc, ht, params)
        np.testing.assert_allclose(out.value, (hc.value + ht.value) / 2, atol=1e-12)

    def test_output_is_convex_combination(self, rng):
        params = init_adaptive_params(ad.ParamStore(4), "f", 6)
        hc, ht = pair(rng, n=5, d=6)
        out = adaptive_fuse(hc, ht, params)
        low = np.minimum(hc.value, ht.value) - 1e-12
        high = np.maximum(hc.value, ht.value) + 1e-12
        assert np.all(out.value >= low) and np.all(out.value <= high)

    def test_swap_symmetry(self, rng):
        params = init_adaptive_params(ad.ParamStore(4), "f", 4)
        hc, ht = pair(rng)
        a = adaptive_fuse(hc, ht, params)
        b = adaptive_fuse(ht, hc, params)
        np.testing.assert_allclose(a.value, b.value, atol=1e-12)

    def test_vector_inputs_supported(self, rng):
        params = init_adaptive_params(ad.ParamStore(2), "f", 4)
        out = adaptive_fuse(ad.Tensor(rng.normal(size=4)), ad.Tensor(rng.normal(size=4)), params)
        assert out.value.shape == (4,)

    def test_gradients_match_finite_differences(self, rng):
        store = ad.ParamStore(6)
        params = init_adaptive_params(store, "f", 4)
        hc, ht = pair(rng, trainable=True)
        w = rng.normal(size=(3, 4))

        def build_loss():
            return ad.sum_(ad.mul(adaptive_fuse(hc, ht, params), ad.const(w)))

        tensors = dict(store.params)
        tensors.update({"hc": hc, "ht": ht})
        fd_check_tensors(build_loss, tensors)


class TestSharedMatrix:
    def test_direct_arithmetic(self):
        hc = ad.const(np.array([1.0, 0.0]))
        ht = ad.const(np.array([0.0, 1.0]))
        gate = ad.const(np.array([0.25, 0.75]))
        out = shared_matrix_fuse(hc, ht, gate)
        np.testing.assert_allclose(out.value, [0.25, 0.25], atol=1e-15)

    def test_gate_near_one_returns_first_channel(self, rng):
        hc, ht = pair(rng)
        gate = ad.const(np.full((3, 4), 1.0 - 1e-12))
        out = shared_matrix_fuse(hc, ht, gate)
        np.testing.assert_allclose(out.value, hc.value, atol=1e-9)

    def test_half_gate_is_midpoint(self, rng):
        hc, ht = pair(rng)
        out = shared_matrix_fuse(hc, ht, ad.const(np.full((3, 4), 0.5)))
        np.testing.assert_allclose(out.value, (hc.value + ht.value) / 2, atol=1e-12)

    def test_monotone_in_gate(self, rng):
        hc, ht = pair(rng)
        g1 = np.full((3, 4), 0.3)
        g2 = g1.copy()
        g2[1, 2] = 0.8
        o1 = shared_matrix_fuse(hc, ht, ad.const(g1)).value
        o2 = shared_matrix_fuse(hc, ht, ad.const(g2)).value
        moved = o2[1, 2] - o1[1, 2]
        toward = hc.value[1, 2] - ht.value[1, 2]
        assert moved * toward > 0 or toward == 0
        mask = np.ones((3, 4), dtype=bool)
        mask[1, 2] = False
        np.testing.assert_array_equal(o1[mask], o2[mask])

    def test_param_gate_stays_in_unit_interval(self, rng):
        # logits kept inside the float64-representable sigmoid range
        store = ad.ParamStore(3)
        params = init_shared_params(store, "f", 3, 4)
        params.raw.value = rng.uniform(-30, 30, size=(3, 4))
        gate = params.gate()
        assert np.all(gate.value > 0) and np.all(gate.value < 1)

    def test_dimension_mismatch_rejected(self, rng):
        hc, ht = pair(rng)
        with pytest.raises(ad.ShapeError):
            shared_matrix_fuse(hc, ht, ad.const(np.full((3, 5), 0.5)))

    def test_gradients_match_finite_differences(self, rng):
        store = ad.ParamStore(6)
        params = init_shared_params(store, "f", 3, 4)
        params.raw.value = rng.normal(size=(3, 4))
        hc, ht = pair(rng, trainable=True)
        w = rng.normal(size=(3, 4))

        def build_loss():
            return ad.sum_(ad.mul(shared_matrix_fuse(hc, ht, params.gate()), ad.const(w)))

        fd_check_tensors(build_loss, {"raw": params.raw, "hc": hc, "ht": ht})


class TestFusionalAttention:
    def test_equal_channels_return_value_row(self, rng):
        params = init_fusional_params(ad.ParamStore(2), "f", 4, 2)
        hc = ad.Tensor(rng.normal(size=(3, 4)))
        out = fusional_attention(hc, ad.const(hc.value.copy()), params)
        expected = np.concatenate(
            [hc.value @ params.v_proj[h][0].value + params.v_proj[h][1].value for h in range(2)],
            axis=1,
        )
        np.testing.assert_allclose(out.value, expected, atol=1e-12)

    def test_identical_keys_average_values(self, rng):
        store = ad.ParamStore(2)
        params = init_fusional_params(store, "f", 4, 2)
        for h in range(2):
            params.k_proj[h][0].value = np.zeros_like(params.k_proj[h][0].value)
        hc, ht = pair(rng)
        out = fusional_attention(hc, ht, params)
        expected = np.concatenate(
            [
                (
                    (hc.value @ params.v_proj[h][0].value + params.v_proj[h][1].value)
                    + (ht.value @ params.v_proj[h][0].value + params.v_proj[h][1].value)
                )
                / 2
                for h in range(2)
            ],
            axis=1,
        )
        np.testing.assert_allclose(out.value, expected, atol=1e-12)

    def test_head_count_must_divide_dim(self):
        with pytest.raises(ValueError, match="divisible"):
            init_fusional_params(ad.ParamStore(0), "f", 6, 4)

    def test_output_dim_preserved(self, rng):
        params = init_fusional_params(ad.ParamStore(1), "f", 8, 4)
        hc, ht = pair(rng, n=2, d=8)
        assert fusional_attention(hc, ht, params).value.shape == (2, 8)

    def test_gradients_match_finite_differences(self, rng):
        store = ad.ParamStore(31)
        params = init_fusional_params(store, "f", 4, 2)
        hc, ht = pair(rng, trainable=True)
        w = rng.normal(size=(3, 4))

        def build_loss():
            return ad.sum_(ad.mul(fusional_attention(hc, ht, params), ad.const(w)))

        tensors = dict(store.params)
        tensors.update({"hc": hc, "ht": ht})
        fd_check_tensors(build_loss, tensors)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=15, deadline=None)
def test_all_mechanisms_blend_with_unit_weight_sums(seed):
    rng = np.random.default_rng(seed)
    store = ad.ParamStore(seed % 1000)
    d = 4
    hc, ht = pair(rng, n=2, d=d)
    adaptive = adaptive_fuse(hc, ht, init_adaptive_params(store, "a", d)).value
    gate = init_shared_params(store, "s", 2, d)
    gate.raw.value = rng.normal(size=(2, d))
    shared = shared_matrix_fuse(hc, ht, gate.gate()).value
    for out in (adaptive, shared):
        low = np.minimum(hc.value, ht.value) - 1e-9
        high = np.maximum(hc.value, ht.value) + 1e-9
        assert np.all(out >= low) and np.all(out <= high)
