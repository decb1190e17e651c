"""Encoder networks, the momentum pair, and the checkpoint format."""

import numpy as np
import pytest

from cyclecontrast import tensor as T
from cyclecontrast.encoder import (
    EncoderConfig,
    MomentumConfig,
    encode,
    ema_update,
    init_params,
    parameters,
    read_checkpoint,
    write_checkpoint,
)
from cyclecontrast.errors import ConfigError, DimensionError, FormatError

SMALL = EncoderConfig(
    input_height=8, input_width=8, hidden_widths=(32, 16),
    embedding_dim=12, proj_dim=10,
)


def batch(n, cfg=SMALL, seed=0):
    rng = np.random.default_rng(seed)
    return rng.random((n, cfg.input_dim), dtype=np.float32)


class TestInit:
    def test_same_seed_identical(self):
        a = init_params(SMALL, seed=7)
        b = init_params(SMALL, seed=7)
        for pa, pb in zip(parameters(a.query), parameters(b.query)):
            np.testing.assert_array_equal(pa.data, pb.data)

    def test_different_seed_differs(self):
        a = init_params(SMALL, seed=7)
        b = init_params(SMALL, seed=8)
        assert any(
            not np.array_equal(pa.data, pb.data)
            for pa, pb in zip(parameters(a.query), parameters(b.query))
        )

    def test_key_is_exact_copy_of_query(self):
        pair = init_params(SMALL, seed=3)
        for pk, pq in zip(parameters(pair.key), parameters(pair.query)):
            assert np.max(np.abs(pk.data - pq.data)) == 0.0

    def test_key_never_requires_grad(self):
        pair = init_params(SMALL, seed=3)
        assert all(not p.requires_grad for p in parameters(pair.key))
        assert all(p.requires_grad for p in parameters(pair.query))

    def test_biases_zero(self):
        pair = init_params(SMALL, seed=1)
        for layer in pair.query.encoder.layers:
            assert np.all(layer.bias.data == 0.0)

    def test_fan_in_scaling(self):
        cfg = EncoderConfig(
            input_height=10, input_width=10, hidden_widths=(100,),
            embedding_dim=64, proj_dim=16,
        )
        pair = init_params(cfg, seed=0)
        w = pair.query.encoder.layers[1].weight.data  # fan_in = 100
        analytic_std = 1.0 / np.sqrt(3.0 * 100.0)
        assert abs(w.std() - analytic_std) / analytic_std < 0.2


class TestEncode:
    def test_empty_batch(self):
        pair = init_params(SMALL, seed=0)
        zv, zc = encode(pair.query, batch(0))
        assert zv.data.shape == (0, SMALL.proj_dim)
        assert zc.data.shape == (0, SMALL.proj_dim)

    def test_output_rows_unit(self):
        pair = init_params(SMALL, seed=0)
        zv, zc = encode(pair.query, batch(9))
        for z in (zv, zc):
            np.testing.assert_allclose(
                np.linalg.norm(z.data, axis=1), 1.0, atol=1e-6
            )

    def test_bit_identical_across_runs(self):
        pair = init_params(SMALL, seed=5)
        x = batch(6, seed=11)
        zv1, zc1 = encode(pair.query, x)
        zv2, zc2 = encode(pair.query, x)
        np.testing.assert_array_equal(zv1.data, zv2.data)
        np.testing.assert_array_equal(zc1.data, zc2.data)

    def test_heads_are_independent(self):
        pair = init_params(SMALL, seed=0)
        zv, zc = encode(pair.query, batch(4))
        assert not np.allclose(zv.data, zc.data)

    def test_shape_mismatch(self):
        pair = init_params(SMALL, seed=0)
        with pytest.raises(DimensionError):
            encode(pair.query, np.zeros((3, SMALL.input_dim + 1), dtype=np.float32))


class TestEmaUpdate:
    def test_momentum_one_is_fixed_point(self):
        pair = init_params(SMALL, seed=2)
        before = [p.data.copy() for p in parameters(pair.key)]
        ema_update(pair.key, pair.query, MomentumConfig(1.0))
        for b, p in zip(before, parameters(pair.key)):
            np.testing.assert_array_equal(b, p.data)

    def test_momentum_zero_copies_query(self):
        pair = init_params(SMALL, seed=2)
        for p in parameters(pair.key):
            p.data[...] = 0.0
        ema_update(pair.key, pair.query, MomentumConfig(0.0))
        for pk, pq in zip(parameters(pair.key), parameters(pair.query)):
            np.testing.assert_array_equal(pk.data, pq.data)

    def test_direct_arithmetic(self):
        pair = init_params(SMALL, seed=2)
        for p in parameters(pair.key):
            p.data[...] = 0.0
        for p in parameters(pair.query):
            p.data[...] = 1.0
        ema_update(pair.key, pair.query, MomentumConfig(0.999))
        for p in parameters(pair.key):
            # float32 evaluation of 1 - 0.999 lands within 1.3e-5 of 0.001
            np.testing.assert_allclose(p.data, 0.001, rtol=1e-4)

    def test_query_untouched(self):
        pair = init_params(SMALL, seed=2)
        before = [p.data.copy() for p in parameters(pair.query)]
        ema_update(pair.key, pair.query, MomentumConfig(0.5))
        for b, p in zip(before, parameters(pair.query)):
            np.testing.assert_array_equal(b, p.data)

    def test_exact_float32_formula(self):
        pair = init_params(SMALL, seed=4)
        rng = np.random.default_rng(0)
        for p in parameters(pair.key):
            p.data[...] = rng.standard_normal(p.data.shape).astype(np.float32)
        old = [p.data.copy() for p in parameters(pair.key)]
        m = np.float32(0.999)
        ema_update(pair.key, pair.query, MomentumConfig(0.999))
        for o, pk, pq in zip(old, parameters(pair.key), parameters(pair.query)):
            expected = m * o + (np.float32(1.0) - m) * pq.data
            assert np.max(np.abs(pk.data - expected)) == 0.0

    def test_closed_form_repeated(self):
        pair = init_params(SMALL, seed=2)
        for p in parameters(pair.key):
            p.data[...] = 0.0
        for p in parameters(pair.query):
            p.data[...] = 1.0
        t = 400
        for _ in range(t):
            ema_update(pair.key, pair.query, MomentumConfig(0.999))
        expected = 1.0 - 0.999**t
        sample = float(parameters(pair.key)[0].data.ravel()[0])
        assert abs(sample - expected) < 1e-5

    def test_structural_mismatch(self):
        a = init_params(SMALL, seed=0)
        b = init_params(
            EncoderConfig(input_height=8, input_width=8, hidden_widths=(16,),
                          embedding_dim=12, proj_dim=10),
            seed=0,
        )
        with pytest.raises(ConfigError):
            ema_update(a.key, b.query, MomentumConfig(0.9))


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        pair = init_params(SMALL, seed=9)
        path = tmp_path / "pair.ckpt"
        write_checkpoint(path, pair, trailing=b"QTAIL")
        loaded, trailer = read_checkpoint(path)
        assert trailer == b"QTAIL"
        assert loaded.config == SMALL
        for pa, pb in zip(
            parameters(pair.query) + parameters(pair.key),
            parameters(loaded.query) + parameters(loaded.key),
        ):
            np.testing.assert_array_equal(pa.data, pb.data)

    def test_write_is_deterministic(self, tmp_path):
        pair = init_params(SMALL, seed=9)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        write_checkpoint(p1, pair)
        write_checkpoint(p2, pair)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOPE" + bytes(100))
        with pytest.raises(FormatError, match="magic"):
            read_checkpoint(path)

    def test_truncation(self, tmp_path):
        pair = init_params(SMALL, seed=9)
        path = tmp_path / "pair.ckpt"
        write_checkpoint(path, pair)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(FormatError, match="truncated"):
            read_checkpoint(path)

    def test_bad_version(self, tmp_path):
        pair = init_params(SMALL, seed=9)
        path = tmp_path / "pair.ckpt"
        write_checkpoint(path, pair)
        blob = bytearray(path.read_bytes())
        blob[4] = 99
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="version"):
            read_checkpoint(path)


class TestConfigValidation:
    def test_rejects_tiny_embedding(self):
        with pytest.raises(ConfigError):
            EncoderConfig(embedding_dim=1).validate()

    def test_rejects_momentum_out_of_range(self):
        with pytest.raises(ConfigError):
            MomentumConfig(1.5).validate()
