"""Width, kernel-size, and subnet morphing."""

import numpy as np
import pytest

from netmorph import (
    DepthMorphRequest,
    InfeasibleMorphError,
    NetworkDef,
    PActLayer,
    ParallelLayer,
    ShapeError,
    SubnetMorphRequest,
    WidthMorphRequest,
    check_preservation,
    compose_filters,
    expand_kernel,
    make_rng,
    morph_practical,
    morph_sequential,
    morph_stacked,
    pad_filter,
    same_pad_conv,
    split_stacked,
    widen,
)


def _two_conv_net(seed=0, base="relu", c_mid=4, k=3, hw=8):
    rng = make_rng(seed)
    return NetworkDef(
        input_shape=(2, hw, hw),
        layers=[
            same_pad_conv(rng.standard_normal((c_mid, 2, k, k)), bias=rng.standard_normal(c_mid)),
            PActLayer(base=base, a=0.0),
            same_pad_conv(rng.standard_normal((3, c_mid, k, k)), bias=rng.standard_normal(3)),
        ],
    )


class TestWiden:
    def test_preserves_outputs(self):
        parent = _two_conv_net(50)
        child = widen(parent, WidthMorphRequest(layer_index=0, new_width=8, seed=0))
        report = check_preservation(parent, child, n_samples=20, tol=1e-10)
        assert report.pass_ and report.exact_mode

    def test_same_width_is_permutation_only(self):
        parent = _two_conv_net(51)
        child = widen(parent, WidthMorphRequest(layer_index=0, new_width=4, seed=0))
        assert check_preservation(parent, child, n_samples=10, tol=1e-10).pass_
        assert sorted(map(tuple, child.layers[0].weights.reshape(4, -1).tolist())) == sorted(
            map(tuple, parent.layers[0].weights.reshape(4, -1).tolist())
        )

    @pytest.mark.parametrize("base", ["relu", "tanh"])
    def test_zero_at_zero_activations_preserve(self, base):
        parent = _two_conv_net(52, base=base)
        child = widen(parent, WidthMorphRequest(layer_index=0, new_width=10, seed=3))
        assert check_preservation(parent, child, n_samples=20, tol=1e-10).pass_

    def test_sigmoid_forces_outgoing_zero(self):
        parent = _two_conv_net(53, base="sigmoid")
        child = widen(parent, WidthMorphRequest(layer_index=0, new_width=8, seed=0))
        assert check_preservation(parent, child, n_samples=20, tol=1e-10).pass_
        # the downstream filter's new input columns carry no weight at all:
        # with sigmoid(0) = 0.5 the incoming-random branch would leak
        hi = child.layers[2].weights
        lo = child.layers[0].weights
        new_rows = [i for i in range(8) if not any(np.array_equal(lo[i], w) for w in parent.layers[0].weights)]
        assert len(new_rows) == 4
        for i in new_rows:
            assert np.abs(hi[:, i]).max() == 0.0

    def test_sigmoid_incoming_zero_branch_breaks(self):
        # negative control: zeroing the incoming side while randomizing the
        # outgoing side must change the function when sigmoid(0) != 0
        rng = make_rng(54)
        parent = _two_conv_net(54, base="sigmoid")
        lo, act, hi = parent.layers
        w_lo = np.concatenate([lo.weights, np.zeros((2, 2, 3, 3))])
        b_lo = np.concatenate([lo.bias, np.zeros(2)])
        w_hi = np.concatenate([hi.weights, rng.standard_normal((3, 2, 3, 3))], axis=1)
        bad = NetworkDef(
            input_shape=parent.input_shape,
            layers=[same_pad_conv(w_lo, bias=b_lo), act, same_pad_conv(w_hi, bias=hi.bias)],
        )
        assert not check_preservation(parent, bad, n_samples=5, tol=1e-8).pass_

    def test_inverse_permutation_recovers_unpermuted_child(self):
        parent = _two_conv_net(55)
        child = widen(parent, WidthMorphRequest(layer_index=0, new_width=7, seed=9))
        lo, _, hi = child.layers
        # reconstruct the permutation by matching the surviving parent rows
        # and undo it on both adjacent filters; the result must again be a
        # valid widening with the parent block leading
        order = np.argsort([np.abs(w).sum() for w in lo.weights])  # any consistent order works
        inv = np.empty_like(order)
        inv[order] = np.arange(len(order))
        restored = NetworkDef(
            input_shape=parent.input_shape,
            layers=[
                same_pad_conv(lo.weights[order], bias=lo.bias[order]),
                child.layers[1],
                same_pad_conv(hi.weights[:, order], bias=hi.bias),
            ],
        )
        assert check_preservation(parent, restored, n_samples=10, tol=1e-10).pass_

    def test_shrink_rejected(self):
        parent = _two_conv_net(56)
        with pytest.raises(ShapeError):
            widen(parent, WidthMorphRequest(layer_index=0, new_width=2, seed=0))

    def test_last_conv_cannot_widen(self):
        parent = _two_conv_net(57)
        with pytest.raises(ShapeError):
            widen(parent, WidthMorphRequest(layer_index=2, new_width=8, seed=0))


class TestExpandKernel:
    def test_1_to_3_exact(self):
        rng = make_rng(60)
        parent = NetworkDef(
            input_shape=(2, 6, 6),
            layers=[same_pad_conv(rng.standard_normal((3, 2, 1, 1)), bias=rng.standard_normal(3))],
        )
        child = expand_kernel(parent, 0, 3)
        assert child.layers[0].kernel == 3 and child.layers[0].pad == 1
        assert check_preservation(parent, child, n_samples=10, tol=1e-12).pass_

    def test_same_kernel_is_identity(self):
        parent = _two_conv_net(61)
        child = expand_kernel(parent, 0, 3)
        assert np.array_equal(child.layers[0].weights, parent.layers[0].weights)

    def test_3_to_7_on_multi_layer_net(self):
        parent = _two_conv_net(62, hw=10)
        child = expand_kernel(parent, 2, 7)
        report = check_preservation(parent, child, n_samples=20, tol=1e-12)
        assert report.pass_ and report.exact_mode

    def test_even_kernel_rejected(self):
        with pytest.raises(ShapeError):
            expand_kernel(_two_conv_net(63), 0, 4)

    def test_shrink_rejected(self):
        with pytest.raises(ShapeError):
            expand_kernel(_two_conv_net(64), 0, 1)


class TestMorphSequential:
    def test_two_layers_match_practical(self):
        rng = make_rng(70)
        g = rng.standard_normal((4, 3, 3, 3))
        factors = morph_sequential(g, widths=[16], kernels=[3, 1], seed=5)
        out = morph_practical(g, DepthMorphRequest(layer_index=0, c_l=16, k1=3, k2=1, seed=5))
        assert np.array_equal(factors[0], out.f_lo)
        assert np.array_equal(factors[1], out.f_hi)

    def test_three_layer_chain_composes_to_target(self):
        rng = make_rng(71)
        g = rng.standard_normal((4, 3, 3, 3))
        factors = morph_sequential(g, widths=[32, 32], kernels=[3, 1, 1], seed=0)
        comp = factors[0]
        for f in factors[1:]:
            comp = compose_filters(comp, f)
        err = np.linalg.norm(comp - pad_filter(g, 3)) / np.linalg.norm(g)
        assert err <= 1e-8

    def test_middle_kernel_above_one(self):
        rng = make_rng(72)
        g = rng.standard_normal((4, 3, 5, 5))
        factors = morph_sequential(g, widths=[16, 16], kernels=[3, 3, 1], seed=1)
        comp = factors[0]
        for f in factors[1:]:
            comp = compose_filters(comp, f)
        err = np.linalg.norm(comp - pad_filter(g, 5)) / np.linalg.norm(g)
        assert err <= 1e-8

    def test_scalar_chain(self):
        g = np.full((1, 1, 1, 1), 5.0)
        factors = morph_sequential(g, widths=[1, 1], kernels=[1, 1, 1], seed=0)
        prod = 1.0
        for f in factors:
            prod *= float(f.reshape(()))
        assert prod == pytest.approx(5.0, abs=1e-12)

    def test_infeasible_sizes_raise(self):
        rng = make_rng(73)
        g = rng.standard_normal((8, 8, 3, 3))
        with pytest.raises(InfeasibleMorphError):
            morph_sequential(g, widths=[1, 1], kernels=[1, 3, 1], seed=0)

    def test_width_count_validated(self):
        with pytest.raises(ShapeError):
            morph_sequential(np.zeros((1, 1, 1, 1)), widths=[1, 1], kernels=[1, 1], seed=0)


class TestSplitStacked:
    def test_half_split(self):
        rng = make_rng(80)
        g = rng.standard_normal((3, 2, 3, 3))
        parts = split_stacked(g, [0.5, 0.5])
        assert np.array_equal(parts[0] + parts[1], g)

    def test_three_way_split(self):
        rng = make_rng(81)
        g = rng.standard_normal((3, 2, 3, 3))
        parts = split_stacked(g, [0.2, 0.3, 0.5])
        assert np.abs(sum(parts) - g).max() <= 1e-15

    def test_bad_weight_sum_raises(self):
        with pytest.raises(ShapeError):
            split_stacked(np.zeros((1, 1, 1, 1)), [0.6, 0.6])


class TestMorphStacked:
    def test_degenerate_single_path_is_identity(self):
        parent = _two_conv_net(90)
        req = SubnetMorphRequest(layer_index=0, path_specs=[[(3, 4)]], split_weights=[1.0])
        assert morph_stacked(parent, req) is parent

    def test_two_way_equal_split_both_plain(self):
        parent = _two_conv_net(91)
        req = SubnetMorphRequest(
            layer_index=0, path_specs=[[(3, 4)], [(3, 4)]], split_weights=[0.5, 0.5]
        )
        child = morph_stacked(parent, req)
        assert isinstance(child.layers[0], ParallelLayer)
        assert check_preservation(parent, child, n_samples=10, tol=1e-10).pass_

    def test_second_path_morphed_deeper(self):
        parent = _two_conv_net(92, hw=10)
        req = SubnetMorphRequest(
            layer_index=0,
            path_specs=[[(3, 4)], [(3, 8), (1, 4)]],
            split_weights=[0.5, 0.5],
            seed=2,
        )
        child = morph_stacked(parent, req)
        report = check_preservation(parent, child, n_samples=10, tol=1e-8)
        assert report.pass_
        # the deep path carries an identity-parameter activation
        deep = child.layers[0].paths[1]
        assert any(isinstance(l, PActLayer) and l.a == 1.0 for l in deep)

    def test_bias_kept_once(self):
        parent = _two_conv_net(93)
        req = SubnetMorphRequest(
            layer_index=0, path_specs=[[(3, 4)], [(3, 4)]], split_weights=[0.5, 0.5]
        )
        child = morph_stacked(parent, req)
        p0, p1 = child.layers[0].paths
        assert np.array_equal(p0[-1].bias, parent.layers[0].bias)
        assert not p1[-1].bias.any()

    def test_path_channel_mismatch_raises(self):
        parent = _two_conv_net(94)
        with pytest.raises(ShapeError):
            morph_stacked(
                parent,
                SubnetMorphRequest(layer_index=0, path_specs=[[(3, 5)]], split_weights=[1.0]),
            )

    def test_path_parity_mismatch_raises(self):
        parent = _two_conv_net(95)
        with pytest.raises(ShapeError):
            morph_stacked(
                parent,
                SubnetMorphRequest(
                    layer_index=0, path_specs=[[(3, 4)], [(4, 8), (3, 4)]], split_weights=[0.5, 0.5]
                ),
            )

    def test_weight_sum_validated(self):
        with pytest.raises(ShapeError):
            SubnetMorphRequest(layer_index=0, path_specs=[[(3, 4)]], split_weights=[0.9])
