import numpy as np
import pytest

from redre import autodiff as ad
from redre.container import ContainerError
from redre.encoder import (
    AttentionTrace,
    EncoderConfig,
    apply_position,
    attention,
    causal_mask,
    check_params,
    encode,
    encode_batch,
    init_params,
    load_checkpoint,
    pad_batch,
    project_qkv,
    save_checkpoint,
    score_sequences,
    split_heads,
)
from redre.rotary import PositionMode, frequency_schedule, sequence_angles


def small_config(mode="sinusoidal", **kw):
    base = dict(input_dim=5, model_dim=8, heads=2, layers=1, ff_dim=16, position_mode=mode)
    base.update(kw)
    return EncoderConfig(**base)


def noisy_params(config, seed=0):
    """Initial weights plus non-trivial biases and gains."""
    rng = np.random.default_rng(seed + 100)
    params = init_params(config, seed)
    for name, value in params.items():
        if value.ndim == 1:
            params[name] = value + 0.3 * rng.standard_normal(value.shape)
    return params


def handles(params):
    g = ad.Graph()
    return {k: g.constant(v) for k, v in params.items()}, g


class TestConfig:
    def test_defaults(self):
        c = EncoderConfig(input_dim=3)
        assert (c.model_dim, c.heads, c.head_dim) == (32, 4, 8)
        assert c.position_mode is PositionMode.SINUSOIDAL

    @pytest.mark.parametrize("kw", [{"heads": 3}, {"model_dim": 6, "heads": 2}, {"layers": 0},
                                    {"tau": 0.0}, {"position_mode": "alibi"}])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            EncoderConfig(input_dim=4, **kw)

    def test_dict_round_trip(self):
        c = small_config("redre", tau=60.0)
        assert EncoderConfig.from_dict(c.to_dict()) == c


class TestParams:
    def test_init_deterministic(self):
        c = small_config()
        a, b = init_params(c, 3), init_params(c, 3)
        assert all(a[k].tobytes() == b[k].tobytes() for k in a)

    def test_key_projection_has_no_bias(self):
        assert "layer0.bk" not in init_params(small_config())

    def test_check_params(self):
        c = small_config()
        p = init_params(c)
        p["in.w"] = p["in.w"][:, :4]
        with pytest.raises(ValueError, match="in.w"):
            check_params(c, p)
        del p["in.w"]
        with pytest.raises(ValueError, match="missing"):
            check_params(c, p)


class TestProjection:
    def test_zero_input(self):
        p, g = handles({k: np.zeros_like(v) for k, v in init_params(small_config()).items()})
        for out in project_qkv(g.constant(np.zeros((1, 4, 8))), p):
            np.testing.assert_array_equal(out.value, 0.0)

    def test_shapes(self, rng):
        p, g = handles(init_params(small_config()))
        for out in project_qkv(g.constant(rng.standard_normal((1, 4, 8))), p):
            assert out.shape == (1, 4, 8)

    def test_homogeneous_without_bias(self, rng):
        p, g = handles(init_params(small_config()))
        x = rng.standard_normal((1, 4, 8))
        one = project_qkv(g.constant(x), p)
        two = project_qkv(g.constant(2 * x), p)
        for a, b in zip(one, two):
            np.testing.assert_allclose(b.value, 2 * a.value, rtol=1e-14)

    def test_width_mismatch(self, rng):
        p, g = handles(init_params(small_config()))
        with pytest.raises(ValueError):
            project_qkv(g.constant(rng.standard_normal((1, 4, 7))), p)


class TestApplyPosition:
    def _qk(self, rng):
        g = ad.Graph()
        return g.constant(rng.standard_normal((1, 2, 3, 4))), g.constant(rng.standard_normal((1, 2, 3, 4)))

    def test_none_identity(self, rng):
        q, k = self._qk(rng)
        q2, k2 = apply_position(q, k, None)
        assert q2.value.tobytes() == q.value.tobytes() and k2.value.tobytes() == k.value.tobytes()

    def test_redre_equal_timestamps(self, rng):
        q, k = self._qk(rng)
        a = sequence_angles("redre", frequency_schedule(4), np.full((1, 3), 5000.0))
        q2, k2 = apply_position(q, k, a)
        np.testing.assert_allclose(q2.value, q.value, atol=1e-12)
        np.testing.assert_allclose(k2.value, k.value, atol=1e-12)

    def test_rope_preserves_row_norms(self, rng):
        q, k = self._qk(rng)
        a = sequence_angles("rope", frequency_schedule(4), length=3)
        q2, _ = apply_position(q, k, a)
        np.testing.assert_allclose(np.linalg.norm(q2.value, axis=-1), np.linalg.norm(q.value, axis=-1),
                                   rtol=1e-12)


class TestAttention:
    def test_single_token(self, rng):
        g = ad.Graph()
        v = rng.standard_normal((1, 2, 1, 4))
        trace = []
        out = attention(g.constant(rng.standard_normal((1, 2, 1, 4))), g.constant(rng.standard_normal((1, 2, 1, 4))),
                        g.constant(v), causal_mask(1), trace)
        np.testing.assert_array_equal(trace[0], 1.0)
        np.testing.assert_allclose(out.value, v, rtol=1e-15)

    def test_identical_keys_uniform(self, rng):
        g = ad.Graph()
        n = 5
        k = np.broadcast_to(rng.standard_normal(4), (1, 1, n, 4)).copy()
        trace = []
        attention(g.constant(rng.standard_normal((1, 1, n, 4))), g.constant(k),
                  g.constant(rng.standard_normal((1, 1, n, 4))), causal_mask(n), trace)
        w = trace[0][0, 0]
        for i in range(n):
            np.testing.assert_allclose(w[i, : i + 1], 1.0 / (i + 1), rtol=1e-12)

    def test_mask_and_row_sums_from_trace(self, rng):
        c = small_config("redre", layers=2)
        x = rng.standard_normal((6, 5))
        t = np.cumsum(rng.exponential(3600, 6))
        trace = AttentionTrace()
        encode(x, t, c, noisy_params(c), trace=trace)
        assert len(trace.layers) == 2
        upper = np.triu(np.ones((6, 6), bool), k=1)
        for w in trace.layers:
            assert w.shape == (1, 2, 6, 6)
            assert np.abs(w[..., upper]).max() <= 1e-15
            np.testing.assert_allclose(w.sum(-1), 1.0, atol=1e-9)


class TestEncode:
    @pytest.mark.parametrize("mode", list(PositionMode))
    def test_finite_scalar(self, mode, rng):
        c = small_config(mode)
        out = encode(rng.standard_normal((4, 5)), np.arange(4) * 100.0, c, noisy_params(c))
        assert isinstance(out, float) and np.isfinite(out)

    def test_permutation_invariance_without_position(self, rng):
        c = small_config("none")
        p = noisy_params(c)
        x = rng.standard_normal((7, 5))
        perm = np.r_[rng.permutation(6), 6]
        np.testing.assert_allclose(encode(x[perm], None, c, p), encode(x, None, c, p), atol=1e-9)

    def test_position_modes_break_permutation(self, rng):
        c = small_config("rope")
        p = noisy_params(c)
        x = rng.standard_normal((7, 5))
        perm = np.r_[rng.permutation(6), 6]
        assert abs(encode(x[perm], None, c, p) - encode(x, None, c, p)) > 1e-6

    def test_redre_time_shift(self, rng):
        c = small_config("redre", layers=2)
        p = noisy_params(c)
        x = rng.standard_normal((6, 5))
        t = np.cumsum(rng.exponential(7200, 6))
        assert encode(x, t + 86400, c, p) == pytest.approx(encode(x, t, c, p), abs=1e-7)

    def test_causality(self, rng):
        c = small_config("rope", layers=2)
        p = noisy_params(c)
        x = rng.standard_normal((2, 6, 5))
        x[1, 5] = rng.standard_normal(5)
        x[1, :5] = x[0, :5]
        out = encode_batch(c, p, x, None, np.array([5, 5]))
        assert out[0] == out[1]

    def test_padding_matches_unpadded(self, rng):
        c = small_config("redre")
        p = noisy_params(c)
        feats = [rng.standard_normal((n, 5)) for n in (3, 7, 1)]
        times = [np.cumsum(rng.exponential(600, n)) for n in (3, 7, 1)]
        batch = score_sequences(c, p, feats, times)
        single = [encode(f, t, c, p) for f, t in zip(feats, times)]
        np.testing.assert_allclose(batch, single, atol=1e-12)

    def test_rejects_bad_lengths(self, rng):
        c = small_config(max_seq_len=4)
        p = init_params(c)
        with pytest.raises(ValueError):
            encode(np.zeros((0, 5)), None, c, p)
        with pytest.raises(ValueError):
            encode(rng.standard_normal((5, 5)), None, c, p)
        with pytest.raises(ValueError):
            encode(rng.standard_normal((3, 4)), None, c, p)

    def test_redre_requires_timestamps(self, rng):
        c = small_config("redre")
        with pytest.raises(ValueError, match="timestamps"):
            encode(rng.standard_normal((3, 5)), None, c, init_params(c))

    def test_pad_batch(self):
        X, T, L = pad_batch([np.ones((2, 3)), np.ones((4, 3))], [np.array([1.0, 2.0]), np.arange(4.0)])
        assert X.shape == (2, 4, 3)
        np.testing.assert_array_equal(L, [2, 4])
        np.testing.assert_array_equal(T[0], [1, 2, 2, 2])
        np.testing.assert_array_equal(X[0, 2:], 0.0)


class TestCheckpoint:
    def test_round_trip_bitwise(self, tmp_path):
        c = small_config("redre")
        p = noisy_params(c)
        save_checkpoint(tmp_path / "a.ckpt", c, p, {"epoch": 3})
        c2, p2, meta = load_checkpoint(tmp_path / "a.ckpt")
        assert c2 == c and meta == {"epoch": 3}
        assert all(p[k].tobytes() == p2[k].tobytes() for k in p)
        save_checkpoint(tmp_path / "b.ckpt", c2, p2, meta)
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_wrong_kind(self, tmp_path):
        from redre import container
        container.write(tmp_path / "x", "something-else", {}, {})
        with pytest.raises(ContainerError):
            load_checkpoint(tmp_path / "x")

    def test_truncated(self, tmp_path):
        c = small_config()
        save_checkpoint(tmp_path / "a.ckpt", c, init_params(c))
        data = (tmp_path / "a.ckpt").read_bytes()
        (tmp_path / "a.ckpt").write_bytes(data[:-10])
        with pytest.raises(ContainerError):
            load_checkpoint(tmp_path / "a.ckpt")


def test_zero_rope_positions_collapse_to_none(rng):
    g = ad.Graph()
    q, k = g.constant(rng.standard_normal((2, 2, 5, 4))), g.constant(rng.standard_normal((2, 2, 5, 4)))
    zero = np.zeros((5, 2)) * frequency_schedule(4).omegas
    q2, k2 = apply_position(q, k, zero)
    np.testing.assert_allclose(q2.value, q.value, atol=1e-12)
    np.testing.assert_allclose(k2.value, k.value, atol=1e-12)


def test_prefix_scores_ignore_later_tokens(rng):
    c = small_config("redre", layers=2)
    p = noisy_params(c)
    x = rng.standard_normal((8, 5))
    t = np.cumsum(rng.exponential(900, 8))
    prefix = [encode(x[:j], t[:j], c, p) for j in range(1, 8)]
    x2 = x.copy()
    x2[7] += 5.0
    np.testing.assert_array_equal(prefix, [encode(x2[:j], t[:j], c, p) for j in range(1, 8)])
