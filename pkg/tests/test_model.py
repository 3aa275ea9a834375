import numpy as np
import pytest

from stpca.dataset import Normalizer, Window
from stpca.model import (ModelConfig, batch_arrays, forward, init_params,
                         predict_windows, set_embedding)
from stpca.pca import EmbeddingTable, zero_embedding

NORM = Normalizer(mean=0.0, std=1.0)


def toy_config(**overrides):
    base = dict(l1=4, l2=4, embed_dim=3, tod_dim=2, dow_dim=2, hidden_dim=6,
                num_blocks=2, use_graph=False, steps_per_day=8)
    base.update(overrides)
    return ModelConfig(**base)


def toy_windows(n_windows, n_nodes, l1=4, l2=4, t=8, seed=0):
    rng = np.random.default_rng(seed)
    return [
        Window(history=rng.uniform(0, 10, size=(n_nodes, l1)),
               target=rng.uniform(0, 10, size=(n_nodes, l2)),
               tod=int(rng.integers(0, t)), dow=int(rng.integers(0, 7)))
        for _ in range(n_windows)
    ]


class TestInit:
    def test_deterministic(self):
        cfg = toy_config()
        a = init_params(cfg, 5, seed=7)
        b = init_params(cfg, 5, seed=7)
        for (ka, va), (kb, vb) in zip(a.tensors().items(), b.tensors().items()):
            assert ka == kb
            np.testing.assert_array_equal(va, vb)

    def test_biases_zero(self):
        params = init_params(toy_config(), 5, seed=1)
        for name, tensor in params.tensors().items():
            if name.startswith("b"):
                np.testing.assert_array_equal(tensor, 0.0)

    def test_seeds_differ(self):
        cfg = toy_config()
        a = init_params(cfg, 5, seed=1)
        b = init_params(cfg, 5, seed=2)
        assert any(
            not np.array_equal(va, vb)
            for va, vb in zip(a.tensors().values(), b.tensors().values())
        )

    def test_xavier_bounds(self):
        params = init_params(toy_config(), 5, seed=3)
        a = np.sqrt(6.0 / (params.config.l1 + params.config.hidden_dim))
        assert np.abs(params.w_x).max() <= a

    def test_adaptive_strategy_by_default(self):
        params = init_params(toy_config(), 5, seed=0)
        assert params.embedding.strategy == "adaptive"
        assert params.trainable_names().count("embedding") == 1


class TestForward:
    def test_zero_params_zero_output(self):
        params = init_params(toy_config(), 5, seed=0)
        for tensor in params.tensors().values():
            tensor[...] = 0.0
        x, _, ti, di = batch_arrays(toy_windows(3, 5), NORM)
        np.testing.assert_array_equal(forward(params, None, x, ti, di), 0.0)

    def test_output_shape(self):
        cfg = toy_config(l2=12)
        params = init_params(cfg, 5, seed=0)
        ws = toy_windows(2, 5, l1=4, l2=12)
        x, _, ti, di = batch_arrays(ws, NORM)
        assert forward(params, None, x, ti, di).shape == (2, 5, 12)

    def test_embedding_slot_is_live(self):
        params = init_params(toy_config(), 5, seed=0)
        x, _, ti, di = batch_arrays(toy_windows(3, 5), NORM)
        rng = np.random.default_rng(1)
        pca_table = EmbeddingTable(values=rng.normal(size=(5, 3)), strategy="pca")
        out_pca = forward(params, pca_table, x, ti, di)
        out_zero = forward(params, zero_embedding(5, 3), x, ti, di)
        assert np.abs(out_pca - out_zero).max() > 1e-8

    def test_deterministic(self):
        params = init_params(toy_config(use_graph=True), 5, seed=0)
        x, _, ti, di = batch_arrays(toy_windows(3, 5), NORM)
        a = forward(params, None, x, ti, di)
        b = forward(params, None, x, ti, di)
        np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("use_graph", [False, True])
    def test_node_permutation_equivariance(self, use_graph):
        cfg = toy_config(use_graph=use_graph)
        params = init_params(cfg, 6, seed=2)
        ws = toy_windows(3, 6)
        x, _, ti, di = batch_arrays(ws, NORM)
        out = forward(params, None, x, ti, di)
        perm = np.random.default_rng(0).permutation(6)
        emb_p = EmbeddingTable(values=params.embedding.values[perm],
                               strategy="adaptive")
        out_p = forward(params, emb_p, x[:, perm, :], ti, di)
        if use_graph:
            # the mixing matmul reorders its reduction under permutation
            np.testing.assert_allclose(out_p, out[:, perm, :], rtol=0, atol=1e-12)
        else:
            np.testing.assert_array_equal(out_p, out[:, perm, :])

    def test_shape_errors(self):
        params = init_params(toy_config(), 5, seed=0)
        x, _, ti, di = batch_arrays(toy_windows(2, 5), NORM)
        with pytest.raises(ValueError, match="embedding rows"):
            forward(params, zero_embedding(4, 3), x, ti, di)
        with pytest.raises(ValueError, match="history length"):
            forward(params, None, x[:, :, :3], ti, di)

    def test_non_finite_reported_with_block(self):
        params = init_params(toy_config(), 5, seed=0)
        params.blocks[1]["w2"][0, 0] = np.inf
        x, _, ti, di = batch_arrays(toy_windows(2, 5), NORM)
        with pytest.raises(FloatingPointError, match="block 1"):
            forward(params, None, x, ti, di)

    def test_predict_windows_batches_match_single_pass(self):
        params = init_params(toy_config(), 5, seed=0)
        ws = toy_windows(10, 5)
        full = predict_windows(params, None, ws, NORM, batch_size=100)
        chunked = predict_windows(params, None, ws, NORM, batch_size=3)
        np.testing.assert_array_equal(full, chunked)


class TestSetEmbedding:
    def test_swap_changes_node_count(self):
        params = init_params(toy_config(), 40, seed=0)
        rng = np.random.default_rng(5)
        table = EmbeddingTable(values=rng.normal(size=(25, 3)), strategy="pca")
        swapped = set_embedding(params, table)
        assert swapped.num_nodes == 25
        ws = toy_windows(2, 25)
        x, _, ti, di = batch_arrays(ws, NORM)
        assert forward(swapped, None, x, ti, di).shape == (2, 25, 4)

    def test_zero_strategy_forces_exact_zeros(self):
        params = init_params(toy_config(), 5, seed=0)
        dirty = EmbeddingTable(values=np.ones((5, 3)), strategy="zero")
        swapped = set_embedding(params, dirty)
        np.testing.assert_array_equal(swapped.embedding.values, 0.0)

    def test_identity_swap_preserves_outputs(self):
        params = init_params(toy_config(), 5, seed=0)
        table = EmbeddingTable(values=params.embedding.values.copy(),
                               strategy="adaptive")
        swapped = set_embedding(params, table)
        x, _, ti, di = batch_arrays(toy_windows(3, 5), NORM)
        np.testing.assert_array_equal(forward(swapped, None, x, ti, di),
                                      forward(params, None, x, ti, di))

    def test_dim_mismatch(self):
        params = init_params(toy_config(), 5, seed=0)
        with pytest.raises(ValueError, match="embed_dim"):
            set_embedding(params, zero_embedding(5, 4))

    def test_original_params_untouched(self):
        params = init_params(toy_config(), 5, seed=0)
        before = params.embedding.values.copy()
        set_embedding(params, zero_embedding(5, 3))
        np.testing.assert_array_equal(params.embedding.values, before)
