import math

import numpy as np
import pytest

from mempolicy import numerics as nx
from mempolicy.action_expert import (
    ActionNormalizer,
    Denoiser,
    DenoiserConfig,
    cfg_combine,
    ddim_sample,
    make_schedule,
    model_eps_fn,
    point_mass_eps_fn,
    training_loss,
)
from mempolicy.errors import ConfigError, DataError, DimensionError

CFG = DenoiserConfig(action_dim=2, horizon=6, n_p=3, d_p=8, d_c=8, d_model=16, n_blocks=2, n_heads=2)


def make(seed=0, cfg=CFG, randomize_head=False):
    d = Denoiser(np.random.default_rng(seed), cfg, dtype=np.float64)
    if randomize_head:
        rng = np.random.default_rng(seed + 100)
        d.head.weight.data = rng.normal(0, 0.3, size=d.head.weight.shape)
    return d


def cond(rng, b, cfg=CFG):
    return rng.normal(size=(b, cfg.n_p, cfg.d_p)), rng.normal(size=(b, 1, cfg.d_c))


# -- oracle pieces: plain numpy, one sample at a time -------------------------


def np_lin(x, layer):
    return x @ layer.weight.data + layer.bias.data


def np_ln(x, norm):
    m = x.mean(-1, keepdims=True)
    v = ((x - m) ** 2).mean(-1, keepdims=True)
    return (x - m) / np.sqrt(v + norm.eps) * norm.gain.data + norm.shift.data


def np_mha(q, kv, attn):
    h = attn.n_heads
    dh = attn.d_model // h
    Q, K, V = np_lin(q, attn.wq), np_lin(kv, attn.wk), np_lin(kv, attn.wv)
    outs = []
    for i in range(h):
        sl = slice(i * dh, (i + 1) * dh)
        s = Q[:, sl] @ K[:, sl].T / math.sqrt(dh)
        w = np.exp(s - s.max(-1, keepdims=True))
        w /= w.sum(-1, keepdims=True)
        outs.append(w @ V[:, sl])
    return np_lin(np.concatenate(outs, -1), attn.wo)


def np_silu_mlp(x, mlp):
    h = np_lin(x, mlp.fc1)
    return np_lin(h / (1 + np.exp(-h)), mlp.fc2)


def sinusoid_np(t, d):
    out = np.zeros(d)
    for i in range(d // 2):
        out[2 * i] = math.sin(t / 10000 ** (2 * i / d))
        out[2 * i + 1] = math.cos(t / 10000 ** (2 * i / d))
    return out


def denoiser_oracle(d, noisy, k, p, c, null=False):
    cfg = d.cfg
    if null:
        ct, pt = d.null_c.data[0], d.null_p.data[0]
    else:
        ct, pt = np_lin(c, d.cond_c), np_lin(p, d.cond_p)
    temb = np_silu_mlp(sinusoid_np(k, cfg.d_model), d.time_mlp)
    h = np_lin(noisy, d.action_in) + d.pos_emb.data + temb + ct
    x = np.concatenate([ct, h])
    for blk in d.blocks:
        y = np_ln(x, blk.norm_sa)
        x = x + np_mha(y, y, blk.self_attn)
        x = x + np_mha(np_ln(x, blk.norm_ca), pt, blk.cross_attn)
        x = x + np_silu_mlp(np_ln(x, blk.norm_ff), blk.ffn)
    return np_lin(np_ln(x[1:], d.norm_out), d.head)


# -- schedule ----------------------------------------------------------------


def test_schedule_properties():
    s = make_schedule(100)
    assert s.alphas_bar[0] >= 0.999
    assert np.all(np.diff(s.alphas_bar) < 0)
    assert np.all(s.alphas_bar > 0) and np.all(s.alphas_bar <= 1)


def test_schedule_matches_formula():
    s = make_schedule(100)
    off = 0.008
    for k in range(100):
        ref = math.cos(((k / 100) + off) / (1 + off) * math.pi / 2) ** 2 / math.cos(
            off / (1 + off) * math.pi / 2
        ) ** 2
        assert abs(s.alphas_bar[k] - ref) < 1e-12


def test_schedule_too_short():
    with pytest.raises(ConfigError):
        make_schedule(5)


# -- guidance ----------------------------------------------------------------


def test_cfg_combine_cases():
    a, b = np.array([2.0]), np.array([0.0])
    assert cfg_combine(a, b, 0.0) is b
    assert cfg_combine(a, b, 1.0) is a
    assert cfg_combine(a, b, 1.5)[0] == 3.0


# -- denoiser ----------------------------------------------------------------


def test_zero_head_predicts_zero():
    rng = np.random.default_rng(0)
    d = make()
    p, c = cond(rng, 3)
    out = d(rng.normal(size=(3, 6, 2)), [1, 50, 99], p, c).data
    assert np.array_equal(out, np.zeros_like(out))


def test_denoiser_matches_composition_oracle():
    rng = np.random.default_rng(1)
    d = make(1, randomize_head=True)
    for prm in d.parameters():
        prm.data = prm.data + rng.normal(0, 0.05, size=prm.shape)
    p, c = cond(rng, 3)
    noisy = rng.normal(size=(3, 6, 2))
    ks = [3, 40, 97]
    drop = np.array([False, True, False])
    out = d(noisy, ks, p, c, drop).data
    for i in range(3):
        ref = denoiser_oracle(d, noisy[i], ks[i], p[i], c[i], null=drop[i])
        assert np.abs(out[i] - ref).max() < 1e-8


def test_denoiser_shape_errors():
    rng = np.random.default_rng(2)
    d = make()
    p, c = cond(rng, 2)
    with pytest.raises(DimensionError):
        d(rng.normal(size=(2, 5, 2)), [0, 0], p, c)
    with pytest.raises(DimensionError):
        d(rng.normal(size=(2, 6, 2)), [0, 0], p[:, :2], c)


def test_conditioning_sensitivity_after_training():
    rng = np.random.default_rng(3)
    d = make(3)
    opt = nx.Adam(d.parameters(), 1e-2)
    sch = make_schedule(100)
    p, c = cond(rng, 2)
    clean = np.stack([np.full((6, 2), 1.0), np.full((6, 2), -1.0)])
    for _ in range(3):
        loss = training_loss(d, p, c, clean, sch, rng)
        d.zero_grad()
        loss.backward()
        opt.step()
    x = rng.normal(size=(1, 6, 2))
    a = d(x, [50], p[:1], c[:1]).data
    b = d(x, [50], p[1:], c[1:]).data
    assert not np.allclose(a, b)


# -- training loss -----------------------------------------------------------


class OracleDenoiser:
    """Returns the exact noise the loss will draw, by replaying the rng."""

    def __init__(self, seed, n, shape, steps):
        rng = np.random.default_rng(seed)
        rng.integers(0, steps, size=n)
        self.eps = rng.standard_normal(size=(n,) + shape)
        self.head = type("H", (), {"weight": nx.Tensor(np.zeros(1))})()

    def __call__(self, noisy, k, p, c, drop):
        return nx.Tensor(self.eps)


def test_loss_zero_for_exact_predictor():
    sch = make_schedule(100)
    rng = np.random.default_rng(4)
    p, c = cond(rng, 5)
    clean = rng.normal(size=(5, 6, 2)) * 0.5
    oracle = OracleDenoiser(9, 20, (6, 2), 100)
    loss = training_loss(oracle, p, c, clean, sch, np.random.default_rng(9))
    assert loss.item() == 0.0


def test_zero_head_loss_monte_carlo():
    sch = make_schedule(100)
    cfg = DenoiserConfig(2, 6, 3, 8, 8, d_model=8, n_blocks=1, n_heads=1)
    d = make(5, cfg)
    rng = np.random.default_rng(5)
    p, c = cond(rng, 2500, cfg)
    with nx.no_grad():
        loss = training_loss(d, p, c, np.zeros((2500, 6, 2)), sch, rng).item()
    assert abs(loss - 12.0) / 12.0 < 0.05


def test_loss_gradient_check():
    sch = make_schedule(100)
    d = make(6, randomize_head=True)
    rng = np.random.default_rng(6)
    p, c = cond(rng, 2)
    clean = rng.normal(size=(2, 6, 2))

    def f():
        return training_loss(d, p, c, clean, sch, np.random.default_rng(11))

    assert nx.grad_check(f, d.parameters(), max_coords=60) < 1e-4


def test_unnormalised_actions_rejected():
    with pytest.raises(DataError):
        training_loss(make(), *cond(np.random.default_rng(0), 1), np.full((1, 6, 2), 7.0),
                      make_schedule(100), np.random.default_rng(0))


def test_loss_halves_on_single_condition():
    sch = make_schedule(100)
    cfg = DenoiserConfig(2, 6, 3, 8, 8, d_model=16, n_blocks=1, n_heads=2)
    d = make(7, cfg)
    opt = nx.Adam(d.parameters(), 3e-3)
    rng = np.random.default_rng(7)
    p, c = cond(rng, 1, cfg)
    p, c = np.repeat(p, 8, 0), np.repeat(c, 8, 0)
    clean = np.repeat(np.linspace(-1, 1, 12).reshape(1, 6, 2), 8, 0)
    losses = []
    for _ in range(500):
        loss = training_loss(d, p, c, clean, sch, rng)
        d.zero_grad()
        loss.backward()
        nx.clip_grad_norm(d.parameters(), 1.0)
        opt.step()
        losses.append(loss.item())
    assert np.mean(losses[-50:]) <= 0.5 * np.mean(losses[:20])


# -- sampling ----------------------------------------------------------------


def test_ddim_point_mass_recovery():
    sch = make_schedule(100)
    mu = np.random.default_rng(8).uniform(-2, 2, size=(6, 2))
    out = ddim_sample(point_mass_eps_fn(mu, sch), sch, [1, 2, 3], (6, 2), 10, 1.5)
    assert np.abs(out - mu).max() < 1e-6


def test_ddim_deterministic_with_model():
    sch = make_schedule(100)
    d = make(9, randomize_head=True)
    p, c = cond(np.random.default_rng(9), 2)
    a = ddim_sample(model_eps_fn(d, p, c), sch, [5, 6], (6, 2))
    b = ddim_sample(model_eps_fn(d, p, c), sch, [5, 6], (6, 2))
    assert np.array_equal(a, b)
    assert not np.array_equal(a[0], a[1])


def test_ddim_guidance_identity():
    sch = make_schedule(100)
    d = make(10, randomize_head=True)
    p, c = cond(np.random.default_rng(10), 1)
    calls = []

    def fn(x, k, guided):
        calls.append(guided)
        return model_eps_fn(d, p, c)(x, k, guided)

    ddim_sample(fn, sch, [0], (6, 2), cfg_scale=1.0)
    assert not any(calls)


def test_ddim_errors():
    sch = make_schedule(100)
    fn = point_mass_eps_fn(np.zeros((6, 2)), sch)
    with pytest.raises(ConfigError):
        ddim_sample(fn, sch, [0], (6, 2), cfg_scale=-0.5)
    with pytest.raises(ConfigError):
        ddim_sample(fn, sch, [0], (6, 2), n_steps=7)


def test_ddim_gaussian_data_mean():
    sch = make_schedule(100)
    m, s = 0.5, 0.8

    def fn(x, k, guided):
        ab = sch.alphas_bar[k]
        eps = math.sqrt(1 - ab) * (x - math.sqrt(ab) * m) / (ab * s * s + 1 - ab)
        return eps, eps

    out = ddim_sample(fn, sch, range(1000), (6, 2), 10, 1.5)
    se = s / math.sqrt(1000)
    assert np.all(np.abs(out.mean(axis=0) - m) < 3 * se)


def test_normalizer_roundtrip():
    rng = np.random.default_rng(11)
    acts = rng.normal(size=(200, 3)) * [0.1, 2.0, 0.0] + [0.0, 1.0, -1.0]
    norm = ActionNormalizer.fit(acts)
    assert np.abs(norm.denormalize(norm.normalize(acts)) - acts).max() < 1e-9
    assert norm.std[2] == norm.std_floor
