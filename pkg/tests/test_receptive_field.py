"""Receptive-field calculus: the recursion, the published table, and the
empirical gradient-support measurement."""

import numpy as np
import pytest

from rfcnn.arch import LayerSpec, make_network
from rfcnn.network import Network
from rfcnn.receptive_field import (
    REFERENCE_MAX_RF,
    RfState,
    central_rf_box,
    empirical_rf,
    max_rf,
    rf_step,
    rf_table,
    verify_reference_table,
)

PUBLISHED = (23, 31, 39, 55, 71, 87, 103, 135, 167, 199, 231, 263,
             295, 327, 359, 391, 423, 455, 487, 519, 551, 583)


class TestRfStep:
    def test_first_conv(self):
        layer = LayerSpec("conv", kernel=(5, 5), stride=(2, 2), padding=(2, 2))
        state = rf_step(RfState(), layer)
        assert (state.rf, state.jump) == (5, 2)

    def test_conv3_after_stride2(self):
        layer = LayerSpec("conv", kernel=(3, 3), stride=(1, 1), padding=(1, 1))
        state = rf_step(RfState(rf=5, jump=2), layer)
        assert (state.rf, state.jump) == (9, 2)

    def test_maxpool(self):
        layer = LayerSpec("maxpool", kernel=(2, 2), stride=(2, 2))
        state = rf_step(RfState(rf=9, jump=2), layer)
        assert (state.rf, state.jump) == (11, 4)

    def test_non_spatial_identity(self):
        state = RfState(rf=7, jump=4)
        for kind in ("batchnorm", "relu", "freqconcat", "linear"):
            assert rf_step(state, LayerSpec(kind)) == state

    def test_invalid_state(self):
        with pytest.raises(ValueError):
            RfState(rf=0)


class TestMaxRf:
    @pytest.mark.parametrize("rho,expected", list(enumerate(PUBLISHED)))
    def test_published_values(self, rho, expected):
        spec = make_network(rho, base_width=8)
        assert max_rf(spec) == (expected, expected)

    def test_rho5_square(self):
        assert max_rf(make_network(5, base_width=8)) == (87, 87)

    def test_monotone_in_rho(self):
        values = [max_rf(make_network(r, base_width=8))[0] for r in range(23)]
        assert values == sorted(values)

    def test_variant_invariance(self):
        for rho in (0, 4, 9):
            results = {
                variant: max_rf(make_network(rho, variant, base_width=8))
                for variant in ("plain", "preact", "shakeshake", "freqaware")
            }
            assert len(set(results.values())) == 1


class TestRfTable:
    def test_full_range(self):
        table = rf_table(0, 21)
        assert [rf for _, (rf, _) in table] == list(PUBLISHED)

    def test_single_row(self):
        assert rf_table(4, 4) == [(4, (71, 71))]

    def test_freqaware_matches_plain(self):
        assert rf_table(0, 21, variant="freqaware") == rf_table(0, 21, variant="plain")

    def test_range_validation(self):
        with pytest.raises(ValueError):
            rf_table(5, 2)
        with pytest.raises(ValueError):
            rf_table(0, 23)

    def test_reference_constant_matches(self):
        assert REFERENCE_MAX_RF == PUBLISHED


class TestVerifyReferenceTable:
    def test_clean_build_passes(self):
        assert verify_reference_table() == []

    def test_broken_builder_names_rho0(self):
        def broken(rho, variant="plain", base_width=8):
            spec = make_network(rho, variant=variant, base_width=base_width)
            smaller = LayerSpec(
                "conv", kernel=(3, 3), stride=spec.input_conv.stride,
                padding=(1, 1), in_channels=spec.input_conv.in_channels,
                out_channels=spec.input_conv.out_channels,
            )
            return type(spec)(**{**spec.__dict__, "input_conv": smaller})

        mismatches = verify_reference_table(network_builder=broken)
        assert mismatches
        assert mismatches[0].startswith("rho=0")


def _box_mask(spec, shape):
    f_lo, f_hi, t_lo, t_hi = central_rf_box(spec, shape)
    mask = np.zeros(shape, dtype=bool)
    mask[f_lo : f_hi + 1, t_lo : t_hi + 1] = True
    return mask


class TestEmpiricalRf:
    @pytest.mark.parametrize("rho,size", [(0, 64), (2, 64), (5, 128)])
    def test_containment(self, rho, size):
        spec = make_network(rho, num_classes=3, base_width=2, in_channels=2)
        net = Network(spec, seed=1)
        probe = np.random.default_rng(rho).standard_normal((1, 2, size, size))
        mask = empirical_rf(net, probe)
        box = _box_mask(spec, (size, size))
        assert mask.sum() > 0
        assert np.all(mask <= box)

    @pytest.mark.parametrize("rho", [0, 2])
    def test_exact_fill_with_avg_pool_and_positive_weights(self, rho):
        spec = make_network(rho, num_classes=3, base_width=2, in_channels=2)
        net = Network(spec, seed=1, pooling="avg")
        for name, p in net.parameters().items():
            if name.endswith(".w"):
                p[...] = np.abs(p) + 0.01
        probe = np.abs(
            np.random.default_rng(7).standard_normal((1, 2, 64, 64))
        ) + 0.1
        mask = empirical_rf(net, probe)
        box = _box_mask(spec, (64, 64))
        assert np.array_equal(mask, box)

    def test_scale_invariant_mask(self):
        # positive-homogeneous path: scaling a positive probe by 10 cannot
        # change which units are active
        spec = make_network(0, num_classes=3, base_width=2, in_channels=2)
        net = Network(spec, seed=2, pooling="avg")
        for name, p in net.parameters().items():
            if name.endswith(".w"):
                p[...] = np.abs(p) + 0.01
        probe = np.abs(np.random.default_rng(3).standard_normal((1, 2, 64, 64))) + 0.1
        assert np.array_equal(empirical_rf(net, probe), empirical_rf(net, probe * 10.0))

    def test_bad_probe_shape(self):
        spec = make_network(0, num_classes=3, base_width=2, in_channels=2)
        net = Network(spec, seed=0)
        with pytest.raises(ValueError):
            empirical_rf(net, np.zeros((2, 2, 32, 32)))
