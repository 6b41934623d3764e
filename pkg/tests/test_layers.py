import numpy as np
import pytest

from grcnn.errors import ConfigError, DimensionError, IterationRangeError
from grcnn.gradcheck import gradcheck
from grcnn.layers import GRCL, GRCLConfig, TransitionLayer
from grcnn.oracles import accumulate_partial_sums
from grcnn.tensor import Tensor, no_grad
from grcnn.verification import (check_closed_gate, check_degeneration, layer_configs, projected,
                                rcl_center_support)


def zero_gate_subnets(block):
    for unit in [block.gate_ff] + list(block.gate_rec):
        unit.conv.weight.data[...] = 0
        unit.conv.bias.data[...] = 0


class TestConfig:
    def test_bad_variant(self):
        with pytest.raises(ConfigError, match="variant"):
            GRCLConfig(variant="lstm")

    def test_zero_iterations(self):
        with pytest.raises(ConfigError):
            GRCLConfig(iterations=0)

    def test_indivisible_groups(self):
        with pytest.raises(ConfigError, match="groups_feedforward"):
            GRCLConfig(in_channels=10, out_channels=16, groups_feedforward=4)

    def test_bottleneck_expansion_mismatch(self):
        with pytest.raises(ConfigError, match="expansion_rate"):
            GRCLConfig(recurrent_transform="bottleneck3", bottleneck_mid_channels=16, expansion_rate=4,
                       out_channels=128)


class TestStructure:
    def test_feedforward_once_and_gate_convs_pointwise(self, make_block):
        block = make_block(iterations=4)
        names = [n for n, _ in block.named_parameters()]
        assert sum(n.startswith("feedforward.conv.weight") for n in names) == 1
        assert block.gate_ff.conv.weight.shape[2:] == (1, 1)
        assert all(g.conv.weight.shape[2:] == (1, 1) for g in block.gate_rec)

    def test_tied_shares_conv_but_not_bn(self, make_block):
        block = make_block(iterations=4, tie_recurrent_weights=True)
        convs = [r.unit.conv for r in block.recurrent]
        bns = [r.unit.bn for r in block.recurrent]
        assert all(c is convs[0] for c in convs)
        assert len({id(b) for b in bns}) == len(bns)

    def test_untied_minus_tied_is_extra_recurrent_sets(self, make_block):
        # T iterations hold T-1 recurrent steps; untying adds T-2 conv sets
        for t in (2, 3, 4):
            tied = make_block(iterations=t, tie_recurrent_weights=True, tie_gate_weights=True)
            untied = make_block(iterations=t, tie_recurrent_weights=False, tie_gate_weights=True)
            conv_size = tied.recurrent[0].unit.conv.weight.size + tied.recurrent[0].unit.conv.bias.size
            n_tied = sum(p.size for p in tied.parameters())
            n_untied = sum(p.size for p in untied.parameters())
            assert n_untied - n_tied == (t - 2) * conv_size

    def test_untied_copies_match_tied_output(self, make_block, rng):
        tied = make_block(iterations=4, tie_recurrent_weights=True)
        untied = make_block(iterations=4, tie_recurrent_weights=False)
        source = dict(tied.named_parameters())
        for name, p in untied.named_parameters():
            # untied step n maps onto the single shared set held by step 0
            shared = name.replace(name.split(".")[1], "0", 1) if name.startswith(("recurrent.", "gate_rec.")) else name
            key = name if name in source else shared
            p.data = source[key].data.copy()
        u = Tensor(rng.standard_normal((2, 4, 5, 5)))
        np.testing.assert_array_equal(tied(u).data, untied(u).data)


class TestTransforms:
    def test_zero_input_gives_zero(self, make_block):
        block = make_block()
        assert not block.transform_ff(Tensor(np.zeros((2, 4, 5, 5)))).data.any()

    def test_output_shape(self):
        cfg = GRCLConfig(in_channels=64, out_channels=128)
        block = GRCL(cfg, rng=np.random.default_rng(0))
        assert block.transform_ff(Tensor(np.zeros((2, 64, 32, 32), np.float32))).shape == (2, 128, 32, 32)

    def test_channel_mismatch(self, make_block):
        with pytest.raises(DimensionError, match="channel"):
            make_block()(Tensor(np.zeros((1, 3, 5, 5))))

    def test_transform_ff_gradcheck(self, make_block, rng):
        block = make_block()
        for _ in range(3):
            fn = lambda t: projected(block.transform_ff(t), np.random.default_rng(0))
            assert gradcheck(fn, rng.standard_normal((2, 4, 5, 5))) < 1e-4


class TestGate:
    def test_zero_subnets_give_half(self, make_block, rng):
        block = make_block()
        zero_gate_subnets(block)
        u = Tensor(rng.standard_normal((2, 4, 5, 5)))
        x = block.transform_ff(u)
        for t in range(3):
            np.testing.assert_array_equal(block.gate(u, x, t).data, 0.5)

    def test_saturated_gate(self, make_block, rng):
        block = make_block()
        zero_gate_subnets(block)
        block.gate_ff.conv.bias.data[...] = 20.0
        u = Tensor(rng.standard_normal((2, 4, 5, 5)))
        assert np.all(block.gate(u, None, 0).data > 0.9999)

    def test_values_in_open_interval(self, make_block, rng):
        block = make_block()
        u = Tensor(rng.standard_normal((2, 4, 5, 5)))
        g = block.gate(u, block.transform_ff(u), 1).data
        assert np.all((g > 0) & (g < 1))

    def test_index_out_of_range(self, make_block, rng):
        block = make_block(iterations=3)
        with pytest.raises(IterationRangeError):
            block.gate(Tensor(rng.standard_normal((1, 4, 3, 3))), None, 3)

    def test_gate_gradcheck(self, make_block, rng):
        block = make_block()
        x_prev = Tensor(rng.standard_normal((2, 8, 5, 5)))
        for _ in range(3):
            fn = lambda t: projected(block.gate(t, x_prev, 1), np.random.default_rng(0))
            assert gradcheck(fn, rng.standard_normal((2, 4, 5, 5))) < 1e-4

    def test_uncached_gate_path_matches(self, make_block, rng):
        block = make_block(iterations=4)
        u = Tensor(rng.standard_normal((2, 4, 5, 5)))
        with no_grad():
            cached = block(u).data
            block.cache_gate_ff = False
            uncached = block(u).data
        np.testing.assert_allclose(cached, uncached, rtol=1e-12)


class TestForward:
    @pytest.mark.parametrize("variant", ["rcl", "grcl_original", "grcl_improved"])
    def test_single_iteration_is_feedforward(self, make_block, rng, variant):
        block = make_block(variant, iterations=1)
        u = Tensor(rng.standard_normal((2, 4, 5, 5)))
        np.testing.assert_array_equal(block(u).data, block.transform_ff(u).data)

    def test_rcl_matches_hand_rolled_loop(self, make_block, rng):
        block = make_block("rcl", iterations=3, in_channels=4, out_channels=4)
        # identity-like recurrent conv (centre tap = 1), BN frozen to identity
        for r in block.recurrent:
            w = np.zeros_like(r.unit.conv.weight.data)
            for c in range(4):
                w[c, c, 1, 1] = 1.0
            r.unit.conv.weight.data = w
        block.eval()
        u = Tensor(rng.standard_normal((2, 4, 5, 5)))
        f = block.transform_ff(u).data
        s = 1.0 / np.sqrt(1.0 + 1e-5)
        x = f
        for _ in range(2):
            x = f + np.maximum(x * s, 0)
        np.testing.assert_allclose(block(u).data, x, rtol=1e-12)
        # x(2) = F + relu(F + relu(F)) collapses to 3F where F > 0
        pos = f > 0
        np.testing.assert_allclose(block(u).data[pos], (f + s * f + s * s * f)[pos], rtol=1e-9)

    def test_improved_matches_partial_sums(self, make_block, rng):
        block = make_block("grcl_improved", iterations=4)
        u = Tensor(rng.standard_normal((2, 4, 5, 5)))
        with no_grad():
            out = block(u).data
            states = accumulate_partial_sums(block.transform_ff(u).data,
                                             lambda n, p: block.gate(u, Tensor(p), n).data,
                                             lambda n, p: block.transform_rec(Tensor(p), n).data, 4)
        np.testing.assert_allclose(out, states[-1], atol=1e-12)

    def test_recording(self, make_block, rng):
        block = make_block(iterations=4)
        block.record = True
        block(Tensor(rng.standard_normal((2, 4, 5, 5))))
        assert len(block.recorded_states) == 4
        assert len(block.recorded_gates) == 3

    def test_degeneration_oracle(self):
        assert check_degeneration((1, 2, 3, 4)).passed

    def test_closed_gate_oracle(self):
        assert check_closed_gate((1, 2, 3, 4, 5)).passed

    def test_closed_gates_state_equals_feedforward_at_every_step(self, make_block, rng):
        block = make_block(iterations=4)
        block.gate_override = 0.0
        block.record = True
        u = Tensor(rng.standard_normal((2, 4, 5, 5)))
        block(u)
        ff = block.transform_ff(u).data
        for x in block.recorded_states:
            np.testing.assert_array_equal(x.data, ff)

    @pytest.mark.parametrize("name,cfg", list(layer_configs()))
    def test_every_variant_gradcheck(self, name, cfg, rng):
        block = GRCL(cfg, rng=np.random.default_rng(0), dtype=np.float64)
        for _ in range(3):
            fn = lambda t: projected(block(t), np.random.default_rng(3))
            assert gradcheck(fn, rng.standard_normal((2, 4, 5, 5))) < 1e-4, name


class TestReceptiveFieldSupport:
    @pytest.mark.parametrize("steps", [0, 1, 2, 3, 4])
    def test_square_support(self, steps):
        support = rcl_center_support(steps)
        side = 3 + 2 * steps
        assert support.sum() == side * side
        ys, xs = np.nonzero(support)
        assert ys.max() - ys.min() + 1 == side and xs.max() - xs.min() + 1 == side

    def test_strictly_growing(self):
        sizes = [rcl_center_support(t).sum() for t in range(5)]
        assert all(b > a for a, b in zip(sizes, sizes[1:]))


class TestTransition:
    def test_halves_spatial_and_maps_channels(self):
        tr = TransitionLayer(128, 160, rng=np.random.default_rng(0))
        assert tr(Tensor(np.zeros((2, 128, 32, 32), np.float32))).shape == (2, 160, 16, 16)

    def test_zero_input_gives_zero(self):
        tr = TransitionLayer(8, 16, rng=np.random.default_rng(0))
        assert not tr(Tensor(np.zeros((2, 8, 6, 6)))).data.any()

    def test_odd_spatial_rejected(self):
        tr = TransitionLayer(4, 8, rng=np.random.default_rng(0))
        with pytest.raises(DimensionError, match="odd"):
            tr(Tensor(np.zeros((1, 4, 5, 6))))

    def test_gradcheck(self, rng):
        tr = TransitionLayer(4, 8, 2, rng=np.random.default_rng(0), dtype=np.float64)
        for _ in range(3):
            fn = lambda t: projected(tr(t), np.random.default_rng(0))
            assert gradcheck(fn, rng.standard_normal((2, 4, 6, 6))) < 1e-4
