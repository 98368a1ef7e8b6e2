import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semixer.encoder import patchify
from semixer.errors import CheckpointError, ConfigError, ShapeError
from semixer.mixing import temporal_mixing_block
from semixer.mpmc import (MAGIC, VARIANTS, ModelConfig, block_sizes, direct_concat_forward, encode,
                          forward_normalized, head_forward, init_params, load_checkpoint, mpmc_forward,
                          save_checkpoint, semixer_forward)
from semixer.numerics import Tensor, make_rng
from semixer.ram import INFERENCE, TRAINING, RamConfig
from semixer.verification import MODEL_GRAD_TOL, toy_model_gradient_error

from test_mixing import zero_mlps

TOY = dict(n=64, t=8, c=2, d_model=8, n1=8, alphas=(2,), integrate_dim=4)


def _inf(params):
    return RamConfig(params.config.p, INFERENCE)


def test_block_sizes_n512():
    cfg = ModelConfig(n=512, t=96)
    assert block_sizes(cfg.scale_specs()) == [64, 96, 48, 24]
    assert block_sizes(cfg.scale_specs(), "no_mpmc") == [120]


def test_parameter_count_matches_layout():
    cfg = ModelConfig(n=512, t=96, c=7)
    params = init_params(cfg, 0)
    D, I = 128, 64
    enc = sum(D * L + N * D for L, N in [(16, 64), (32, 32), (64, 16), (128, 8)])
    blocks = sum(2 * (N * N + N) + 2 * (D * D + D) + 4 * D for N in [64, 96, 48, 24])
    head = I * D + I + 96 * 120 * I + 96
    assert params.num_parameters() == enc + blocks + head


@pytest.mark.parametrize("variant", VARIANTS)
def test_output_shape_contract(variant):
    params = init_params(ModelConfig(variant=variant, **TOY), 1)
    x = make_rng(2).standard_normal((3, 64, 2))
    assert semixer_forward(x, params).shape == (3, 8, 2)
    assert semixer_forward(x[0], params).shape == (8, 2)


def test_single_scale_chain_is_one_block(rng):
    cfg = ModelConfig(n=64, t=8, c=1, d_model=8, n1=8, alphas=())
    params = init_params(cfg, 0)
    embs = encode(rng.standard_normal((2, 64, 1)), params)
    (out,) = mpmc_forward(embs, params, _inf(params))
    ref = temporal_mixing_block(embs[0], params.blocks[0], _inf(params))
    np.testing.assert_array_equal(out.data, ref.data)


def test_identity_chain_returns_last_scale_rows(rng):
    params = init_params(ModelConfig(variant="no_ram", **TOY), 0)
    for blk in params.blocks:
        zero_mlps(blk)
    embs = encode(rng.standard_normal((2, 64, 2)), params)
    outs = mpmc_forward(embs, params, _inf(params))
    np.testing.assert_array_equal(outs[1].data, embs[1].data)


def test_chain_keeps_last_rows(rng):
    params = init_params(ModelConfig(**TOY), 0)
    embs = encode(rng.standard_normal((1, 64, 2)), params)
    outs = mpmc_forward(embs, params, _inf(params))
    full = temporal_mixing_block(Tensor(np.concatenate([outs[0].data, embs[1].data], axis=-2)),
                                 params.blocks[1], _inf(params))
    np.testing.assert_allclose(outs[1].data, full.data[:, -embs[1].shape[-2]:], atol=1e-12)


def test_head_n512_dimensions():
    params = init_params(ModelConfig(n=512, t=96, d_model=8), 0)
    assert params.pred_w.shape == (96, 7680)


def test_head_bias_only(rng):
    params = init_params(ModelConfig(**TOY), 0)
    params.integ_w.data[...] = 0
    params.integ_b.data[...] = 0
    outs = [Tensor(rng.standard_normal((3, s.num_patches, 8))) for s in params.specs]
    y = head_forward(outs, params).data
    np.testing.assert_array_equal(y, np.tile(params.pred_b.data, (3, 1)))


def test_head_matches_loop_oracle(rng):
    params = init_params(ModelConfig(**TOY), 0)
    outs = [rng.standard_normal((s.num_patches, 8)) for s in params.specs]
    rows = np.concatenate(outs)
    Wi, bi, Wp, bp = (t.data for t in (params.integ_w, params.integ_b, params.pred_w, params.pred_b))
    flat = []
    for r in rows:
        for k in range(Wi.shape[0]):
            flat.append(sum(Wi[k, d] * r[d] for d in range(8)) + bi[k])
    ref = [sum(Wp[j, i] * flat[i] for i in range(len(flat))) + bp[j] for j in range(8)]
    np.testing.assert_allclose(head_forward([Tensor(o) for o in outs], params).data, ref, atol=1e-10)


def _zero_model(cfg):
    params = init_params(cfg, 0)
    for t in params.parameters():
        t.data[...] = 0
    params.pred_b.data[...] = np.linspace(-1, 1, cfg.t)
    return params


def test_constant_history_zero_weights():
    params = _zero_model(ModelConfig(**TOY))
    hist = np.tile([5.0, -2.0], (64, 1))
    y = semixer_forward(hist, params)
    b = params.pred_b.data
    np.testing.assert_allclose(y, np.stack([5 + 1e-5 * b, -2 + 1e-5 * b], axis=1), atol=1e-14)
    direct = _zero_model(ModelConfig(variant="no_mpmc", **TOY))
    np.testing.assert_allclose(direct_concat_forward(hist, direct), y, atol=1e-14)


def test_direct_concat_single_block_over_all_patches():
    params = init_params(ModelConfig(n=512, t=4, d_model=4, integrate_dim=2, variant="no_mpmc"), 0)
    assert [b.num_patches for b in params.blocks] == [120]
    assert direct_concat_forward(np.random.default_rng(0).standard_normal((512, 1)), params).shape == (4, 1)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10 ** 6), st.sampled_from(["full", "sam"]))
def test_channel_permutation_equivariance(seed, variant):
    cfg = dict(TOY, c=3)
    params = init_params(ModelConfig(variant=variant, **cfg), seed % 7)
    x = np.random.default_rng(seed).standard_normal((2, 64, 3))
    perm = np.random.default_rng(seed + 1).permutation(3)
    np.testing.assert_allclose(semixer_forward(x[:, :, perm], params),
                               semixer_forward(x, params)[:, :, perm], atol=1e-12)


def test_single_scale_direct_equals_chain(rng):
    cfg = ModelConfig(n=64, t=8, c=2, d_model=8, n1=8, alphas=())
    params = init_params(cfg, 3)
    x = rng.standard_normal((2, 64, 2))
    train = RamConfig(0.85, TRAINING)
    np.testing.assert_array_equal(semixer_forward(x, params, train, make_rng(1)),
                                  direct_concat_forward(x, params, train, make_rng(1)))


def test_seeded_forward_is_bit_deterministic(rng):
    params = init_params(ModelConfig(**TOY), 0)
    x = rng.standard_normal((4, 64, 2))
    train = RamConfig(0.85, TRAINING)
    a = forward_normalized(x, params, train, make_rng(8)).data
    b = forward_normalized(x, params, train, make_rng(8)).data
    assert np.array_equal(a, b)


def test_end_to_end_gradient():
    assert toy_model_gradient_error(seed=0) < MODEL_GRAD_TOL


def test_encode_rows_are_sample_major(rng):
    params = init_params(ModelConfig(**TOY), 0)
    x = rng.standard_normal((2, 64, 2))
    embs = encode(x, params)
    spec = params.specs[0]
    ref = patchify(x[1, :, 0], spec) @ params.encoder.projections[0].data.T + params.encoder.positions[0].data
    np.testing.assert_allclose(embs[0].data[2], ref, atol=1e-12)


def test_encode_shape_error():
    params = init_params(ModelConfig(**TOY), 0)
    with pytest.raises(ShapeError):
        encode(np.ones((2, 63, 2)), params)


def test_invalid_variant():
    with pytest.raises(ConfigError):
        ModelConfig(n=64, t=8, variant="wide")


@pytest.mark.parametrize("variant", VARIANTS)
def test_checkpoint_round_trip(tmp_path, variant):
    params = init_params(ModelConfig(variant=variant, p=0.7, **TOY), 4)
    save_checkpoint(params, tmp_path / "m.semx")
    back = load_checkpoint(tmp_path / "m.semx")
    assert back.config == params.config
    for a, b in zip(params.parameters(), back.parameters()):
        assert np.array_equal(a.data, b.data)
    save_checkpoint(back, tmp_path / "again.semx")
    assert (tmp_path / "m.semx").read_bytes() == (tmp_path / "again.semx").read_bytes()


def test_checkpoint_header_layout(tmp_path):
    params = init_params(ModelConfig(**TOY), 0)
    save_checkpoint(params, tmp_path / "m.semx")
    raw = (tmp_path / "m.semx").read_bytes()
    assert raw[:5] == MAGIC
    assert np.frombuffer(raw[5:33], dtype="<u4").tolist() == [64, 8, 2, 8, 2, 8, 4]
    assert len(raw) == 5 + 28 + 4 + 9 + 8 + 8 * params.num_parameters()


def test_checkpoint_bad_magic(tmp_path):
    params = init_params(ModelConfig(**TOY), 0)
    save_checkpoint(params, tmp_path / "m.semx")
    raw = bytearray((tmp_path / "m.semx").read_bytes())
    raw[0:5] = b"XXXXX"
    (tmp_path / "m.semx").write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="bad checkpoint magic"):
        load_checkpoint(tmp_path / "m.semx")


def test_checkpoint_truncated(tmp_path):
    params = init_params(ModelConfig(**TOY), 0)
    save_checkpoint(params, tmp_path / "m.semx")
    raw = (tmp_path / "m.semx").read_bytes()
    (tmp_path / "m.semx").write_bytes(raw[:-8])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "m.semx")
    (tmp_path / "m.semx").write_bytes(raw[:20])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "m.semx")


def test_missing_checkpoint(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "none.semx")
