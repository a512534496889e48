import math

import numpy as np
import pytest

from sswim.kernels import KernelFamily, PlacedKernel, pspk, rfk
from sswim.network import (
    GridSpec,
    LayerParams,
    SnnModel,
    causal_conv_matrix,
    forward,
    load_model,
    model_from_dict,
    model_to_dict,
    output_voltages,
    psp_contributions,
    psp_window_matrix,
    save_model,
    simulate_hidden_layer,
)
from sswim.signals import DiscreteSignal, SpikeTrainSet


def hidden_layer(weights, bias, delay, support, cost, rf_support,
                 family=KernelFamily.HAT):
    weights = np.atleast_2d(np.asarray(weights, dtype=float))
    n = weights.shape[0]
    return LayerParams(
        weights=weights,
        bias=np.full(n, float(bias)) if np.isscalar(bias) else np.asarray(bias, float),
        delay=np.full(n, float(delay)),
        support=np.full(n, float(support)),
        pspk=pspk(family),
        spike_cost=np.full(n, float(cost)),
        rf_support=np.full(n, float(rf_support)),
        rfk=rfk(KernelFamily.EXP),
    )


def output_layer(weights, bias, delay, support, family=KernelFamily.HAT):
    weights = np.atleast_2d(np.asarray(weights, dtype=float))
    n = weights.shape[0]
    return LayerParams(
        weights=weights,
        bias=np.full(n, float(bias)) if np.isscalar(bias) else np.asarray(bias, float),
        delay=np.full(n, float(delay)) if np.isscalar(delay) else np.asarray(delay, float),
        support=np.full(n, float(support)) if np.isscalar(support) else np.asarray(support, float),
        pspk=pspk(family),
    )


class TestPspContributions:
    def test_single_spike_rectified_copy(self):
        layer = hidden_layer([[1.0]], 0.0, delay=0.0, support=2.0, cost=0.0, rf_support=1.0)
        spikes = SpikeTrainSet(trains=[np.array([10])], n_steps=16)
        psp = psp_contributions(layer, 0, spikes)
        expected = np.zeros(16)
        expected[10] = 1.0
        expected[11] = 0.5
        np.testing.assert_allclose(psp.values[0], expected)

    def test_empty_train_is_silent(self):
        layer = hidden_layer([[1.0]], 0.0, delay=0.0, support=2.0, cost=0.0, rf_support=1.0)
        spikes = SpikeTrainSet(trains=[np.array([], dtype=int)], n_steps=8)
        psp = psp_contributions(layer, 0, spikes)
        assert np.all(psp.values == 0.0)

    def test_constant_input_reaches_tap_sum(self):
        # hat with support 2 on the unit grid has taps [1, 0.5]
        layer = hidden_layer([[1.0]], 0.0, delay=0.0, support=2.0, cost=0.0, rf_support=1.0)
        sig = DiscreteSignal(values=np.ones((1, 12)))
        psp = psp_contributions(layer, 0, sig)
        np.testing.assert_allclose(psp.values[0, 1:], 1.5)
        assert psp.values[0, 0] == 1.0  # transient: only the t=0 tap seen

    def test_channel_mismatch_rejected(self):
        layer = hidden_layer([[1.0, 2.0]], 0.0, delay=0.0, support=2.0, cost=0.0, rf_support=1.0)
        with pytest.raises(ValueError):
            psp_contributions(layer, 0, DiscreteSignal(values=np.ones((3, 8))))

    def test_sparse_placement_equals_dense_convolution(self):
        rng = np.random.default_rng(3)
        layer = hidden_layer([[1.0]], 0.0, delay=1.0, support=3.0, cost=0.0, rf_support=1.0)
        steps = 40
        train = np.sort(rng.choice(steps, size=9, replace=False))
        spikes = SpikeTrainSet(trains=[train], n_steps=steps)
        sparse = psp_contributions(layer, 0, spikes).values[0]
        comb = np.zeros(steps)
        comb[train] = 1.0
        taps = PlacedKernel(pspk(KernelFamily.HAT), 1.0, 3.0).taps(steps)
        dense = comb @ causal_conv_matrix(taps, steps).T
        np.testing.assert_allclose(sparse, dense, atol=1e-12)


class TestSimulateHidden:
    def test_constant_suprathreshold_drive_spikes_everywhere(self):
        layer = hidden_layer([[0.0]], 1.0, delay=0.0, support=2.0, cost=0.0, rf_support=5.0)
        sig = DiscreteSignal(values=np.zeros((1, 10)))
        spikes, volt = simulate_hidden_layer(layer, sig)
        np.testing.assert_array_equal(spikes.trains[0], np.arange(10))
        np.testing.assert_allclose(volt.values[0], 1.0)

    def test_subthreshold_drive_never_spikes(self):
        layer = hidden_layer([[0.0]], 0.5, delay=0.0, support=2.0, cost=-2.0, rf_support=5.0)
        sig = DiscreteSignal(values=np.zeros((1, 10)))
        spikes, _ = simulate_hidden_layer(layer, sig)
        assert spikes.trains[0].size == 0

    def test_refractory_suppression_hand_simulation(self):
        # drive: bias 0.95 plus a PSP bump of 0.1 at step 5 (0.05 at step 6)
        layer = hidden_layer([[0.1]], 0.95, delay=0.0, support=2.0,
                             cost=-3.0, rf_support=5.0)
        spikes_in = SpikeTrainSet(trains=[np.array([5])], n_steps=10)
        spikes, volt = simulate_hidden_layer(layer, spikes_in)
        np.testing.assert_array_equal(spikes.trains[0], [5])
        expected = np.full(10, 0.95)
        expected[5] += 0.1
        expected[6] += 0.05
        for t in range(6, 10):
            expected[t] += -3.0 * math.exp(-(t - 5) / 5.0)
        np.testing.assert_allclose(volt.values[0], expected, atol=1e-12)

    def test_refractory_never_acts_at_spike_step(self):
        # two neurons, drive above threshold at every step: the first spike
        # must not change the voltage at its own step
        layer = hidden_layer([[0.0]], 1.2, delay=0.0, support=2.0,
                             cost=-5.0, rf_support=3.0)
        sig = DiscreteSignal(values=np.zeros((1, 6)))
        _, volt = simulate_hidden_layer(layer, sig)
        assert volt.values[0, 0] == pytest.approx(1.2)

    def test_causality_under_truncation(self):
        rng = np.random.default_rng(11)
        layer = hidden_layer(rng.normal(size=(3, 2)), 0.4, delay=1.0, support=4.0,
                             cost=-1.0, rf_support=4.0)
        x = rng.normal(size=(2, 30))
        t0 = 17
        x_trunc = x.copy()
        x_trunc[:, t0 + 1:] = 0.0
        s_full, v_full = simulate_hidden_layer(layer, DiscreteSignal(values=x))
        s_trunc, v_trunc = simulate_hidden_layer(layer, DiscreteSignal(values=x_trunc))
        np.testing.assert_allclose(
            v_full.values[:, : t0 + 1], v_trunc.values[:, : t0 + 1], atol=1e-12
        )
        for a, b in zip(s_full.trains, s_trunc.trains):
            np.testing.assert_array_equal(a[a <= t0], b[b <= t0])


class TestOutputVoltages:
    def test_zero_weights_give_bias(self):
        layer = output_layer(np.zeros((2, 3)), 0.7, delay=0.0, support=2.0)
        spikes = SpikeTrainSet(trains=[np.array([1]), np.array([2]), np.array([], int)],
                               n_steps=12)
        out = output_voltages(layer, spikes, window=(6, 12))
        np.testing.assert_allclose(out.values, 0.7)

    def test_single_spike_reproduces_placed_kernel(self):
        layer = output_layer([[1.0]], 0.0, delay=2.0, support=3.0)
        spikes = SpikeTrainSet(trains=[np.array([4])], n_steps=16)
        out = output_voltages(layer, spikes, window=(0, 16))
        pk = PlacedKernel(pspk(KernelFamily.HAT), 2.0, 3.0)
        expected = pk.sample_at(np.arange(16) - 4.0)
        np.testing.assert_allclose(out.values[0], expected)

    def test_two_spikes_superpose(self):
        layer = output_layer([[1.0]], 0.0, delay=1.0, support=2.0)
        spikes = SpikeTrainSet(trains=[np.array([3, 8])], n_steps=16)
        out = output_voltages(layer, spikes, window=(0, 16))
        pk = PlacedKernel(pspk(KernelFamily.HAT), 1.0, 2.0)
        t = np.arange(16)
        expected = pk.sample_at(t - 3.0) + pk.sample_at(t - 8.0)
        np.testing.assert_allclose(out.values[0], expected)

    def test_affine_superposition_in_weights(self):
        rng = np.random.default_rng(5)
        w1 = rng.normal(size=(2, 4))
        w2 = rng.normal(size=(2, 4))
        bias = rng.normal(size=2)
        trains = [np.sort(rng.choice(20, size=4, replace=False)) for _ in range(4)]
        spikes = SpikeTrainSet(trains=trains, n_steps=20)
        mk = lambda w: output_layer(w, bias, delay=1.5, support=3.0)
        v1 = output_voltages(mk(w1), spikes, (10, 20)).values
        v2 = output_voltages(mk(w2), spikes, (10, 20)).values
        v12 = output_voltages(mk(w1 + w2), spikes, (10, 20)).values
        np.testing.assert_allclose(v12, v1 + v2 - bias[:, None], atol=1e-12)


def tiny_model(rng=None, n_hidden=4):
    rng = rng or np.random.default_rng(0)
    hid = hidden_layer(rng.normal(size=(n_hidden, 2)) * 0.3, 0.8, delay=1.0,
                       support=3.0, cost=-1.5, rf_support=3.0)
    out = output_layer(rng.normal(size=(2, n_hidden)) * 0.5, 0.1, delay=1.0, support=4.0)
    return SnnModel(layers=[hid, out], d_in=2, d_out=2,
                    grid=GridSpec(dt=1.0, total_steps=24, horizon=8))


class TestForward:
    def test_zero_weight_model_predicts_bias(self):
        hid = hidden_layer(np.zeros((3, 2)), 1.0, delay=0.0, support=2.0,
                           cost=0.0, rf_support=2.0)
        out = output_layer(np.zeros((2, 3)), 0.25, delay=0.0, support=2.0)
        model = SnnModel(layers=[hid, out], d_in=2, d_out=2,
                         grid=GridSpec(dt=1.0, total_steps=20, horizon=5))
        pred, hidden = forward(model, np.zeros((2, 15)))
        np.testing.assert_allclose(pred.values, 0.25)
        assert len(hidden) == 1
        assert all(t.size == 20 for t in hidden[0].trains)

    def test_forward_is_deterministic(self):
        model = tiny_model()
        x = np.random.default_rng(9).normal(size=(2, 16))
        p1, _ = forward(model, x)
        p2, _ = forward(model, x)
        np.testing.assert_array_equal(p1.values, p2.values)

    def test_forward_pads_observation_window(self):
        model = tiny_model()
        x = np.random.default_rng(2).normal(size=(2, 16))
        p_short, _ = forward(model, x)
        x_padded = np.zeros((2, 24))
        x_padded[:, :16] = x
        p_full, _ = forward(model, x_padded)
        np.testing.assert_array_equal(p_short.values, p_full.values)

    def test_prediction_is_finite(self):
        model = tiny_model()
        x = np.random.default_rng(4).normal(size=(2, 16))
        pred, _ = forward(model, x)
        assert pred.values.shape == (2, 8)
        assert np.all(np.isfinite(pred.values))


class TestModelValidation:
    def test_width_chain_enforced(self):
        hid = hidden_layer(np.zeros((3, 2)), 1.0, 0.0, 2.0, 0.0, 2.0)
        out = output_layer(np.zeros((2, 4)), 0.0, 0.0, 2.0)
        with pytest.raises(ValueError):
            SnnModel(layers=[hid, out], d_in=2, d_out=2,
                     grid=GridSpec(1.0, 20, 5))

    def test_output_layer_must_be_last(self):
        hid = hidden_layer(np.zeros((3, 2)), 1.0, 0.0, 2.0, 0.0, 2.0)
        with pytest.raises(ValueError):
            SnnModel(layers=[hid], d_in=2, d_out=3, grid=GridSpec(1.0, 20, 5))


class TestSerialization:
    def test_round_trip_is_exact(self, tmp_path):
        model = tiny_model(np.random.default_rng(31))
        path = tmp_path / "model.json"
        save_model(model, path)
        loaded = load_model(path)
        for orig, back in zip(model.layers, loaded.layers):
            np.testing.assert_array_equal(orig.weights, back.weights)
            np.testing.assert_array_equal(orig.bias, back.bias)
            np.testing.assert_array_equal(orig.delay, back.delay)
            np.testing.assert_array_equal(orig.support, back.support)
            assert orig.pspk == back.pspk
        assert loaded.grid == model.grid
        x = np.random.default_rng(1).normal(size=(2, 16))
        np.testing.assert_array_equal(
            forward(model, x)[0].values, forward(loaded, x)[0].values
        )

    def test_dict_round_trip(self):
        model = tiny_model()
        again = model_from_dict(model_to_dict(model))
        assert model_to_dict(again) == model_to_dict(model)


class TestWindowMatrix:
    def test_window_matrix_matches_direct_placement(self):
        pk = PlacedKernel(pspk(KernelFamily.MORLET), 2.5, 4.0)
        k = psp_window_matrix(pk, 20, (12, 20))
        spikes = np.array([3, 9, 15])
        comb = np.zeros(20)
        comb[spikes] = 1.0
        via_matrix = comb @ k
        t = np.arange(12, 20, dtype=float)
        direct = sum(pk.sample_at(t - s) for s in spikes)
        np.testing.assert_allclose(via_matrix, direct, atol=1e-14)
