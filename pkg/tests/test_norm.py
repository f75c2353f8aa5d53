import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rainkit import norm
from rainkit import tensor as T
from rainkit.gradcheck import check_gradients
from oracles import loop_masked_stats, random_mask

EPS = 1e-5


def _t(a, dtype=np.float32):
    return T.Tensor(np.asarray(a, dtype))


def _fg_bg_stats(out, mask):
    """Recompute (fg_mean, fg_std, bg_mean, bg_std) in float64, per sample/channel."""
    fg = norm.masked_channel_stats(T.Tensor(out.astype(np.float64)), mask.astype(np.float64), EPS)
    bg = norm.masked_channel_stats(T.Tensor(out.astype(np.float64)), 1.0 - mask.astype(np.float64), EPS)
    return fg.mean.data, fg.std.data, bg.mean.data, bg.std.data


# masked_channel_stats ------------------------------------------------------


def test_stats_constant_region():
    f = np.full((1, 2, 4, 4), 3.0)
    f[:, :, 2:] = -7.0  # outside the mask
    m = np.zeros((1, 1, 4, 4))
    m[:, :, :2] = 1
    st_ = norm.masked_channel_stats(T.Tensor(f), m, EPS)
    np.testing.assert_allclose(st_.mean.data, 3.0)
    np.testing.assert_allclose(st_.std.data, np.sqrt(EPS))
    assert st_.pixel_count.tolist() == [8]


def test_stats_hand_computed():
    f = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
    m = np.array([[1.0, 1.0], [0.0, 0.0]]).reshape(1, 1, 2, 2)
    st_ = norm.masked_channel_stats(T.Tensor(f), m, EPS)
    assert st_.mean.item() == pytest.approx(1.5)
    assert st_.std.item() == pytest.approx(np.sqrt(0.25 + EPS))


def test_stats_literal_form_hand_computed():
    f = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
    m = np.array([[1.0, 1.0], [0.0, 0.0]]).reshape(1, 1, 2, 2)
    st_ = norm.masked_channel_stats(T.Tensor(f), m, EPS, literal=True)
    # residuals (-0.5, 0.5, -1.5, -1.5) over 2 masked pixels
    assert st_.std.item() == pytest.approx(np.sqrt((0.25 + 0.25 + 2.25 + 2.25) / 2 + EPS))


def test_stats_full_mask_equals_instance_stats(rng):
    f = rng.standard_normal((2, 3, 5, 5))
    st_ = norm.masked_channel_stats(T.Tensor(f), np.ones((2, 1, 5, 5)), EPS)
    np.testing.assert_allclose(st_.mean.data[..., 0, 0], f.mean(axis=(2, 3)), atol=1e-12)
    np.testing.assert_allclose(st_.std.data[..., 0, 0], np.sqrt(f.var(axis=(2, 3)) + EPS), atol=1e-12)


@pytest.mark.parametrize("literal", [False, True])
def test_stats_match_loop_oracle(rng, literal):
    f = rng.standard_normal((2, 4, 8, 8)).astype(np.float32)
    m = random_mask(rng, 2, 8, 8)
    st_ = norm.masked_channel_stats(T.Tensor(f), m, EPS, literal=literal)
    mean, std = loop_masked_stats(f.astype(np.float64), m, EPS, literal)
    np.testing.assert_allclose(st_.mean.data[..., 0, 0], mean, atol=1e-6)
    np.testing.assert_allclose(st_.std.data[..., 0, 0], std, atol=1e-6)


def test_stats_empty_region_raises():
    f = T.Tensor(np.ones((2, 1, 3, 3)))
    m = np.zeros((2, 1, 3, 3))
    m[0, 0, 0, 0] = 1
    with pytest.raises(norm.DegenerateRegion, match=r"\[1\]"):
        norm.masked_channel_stats(f, m)


def test_stats_mask_shape_checked():
    with pytest.raises(T.ShapeError):
        norm.masked_channel_stats(T.Tensor(np.ones((1, 1, 3, 3))), np.ones((1, 1, 4, 4)))


# rain_forward ---------------------------------------------------------------


def test_rain_constant_regions_land_on_background_level():
    a, b = 5.0, -2.0
    m = np.zeros((1, 1, 4, 4), np.float32)
    m[:, :, 1:3, 1:3] = 1
    f = np.where(m.astype(bool), a, b).astype(np.float32).repeat(2, axis=1)
    out = norm.rain_forward(_t(f), m, EPS).data
    np.testing.assert_allclose(out, b, atol=1e-6)


def test_rain_literal_roles_differ_on_constant_regions():
    m = np.zeros((1, 1, 4, 4), np.float32)
    m[:, :, 1:3, 1:3] = 1
    f = np.where(m.astype(bool), 5.0, -2.0).astype(np.float32)
    out = norm.rain_forward(_t(f), m, EPS, literal_roles=True).data
    # normalized foreground is 0, so it lands on the shift = background std
    np.testing.assert_allclose(out[m.astype(bool)], np.sqrt(EPS), atol=1e-6)


def test_rain_alignment_and_background_identity(rng):
    f = (rng.standard_normal((3, 4, 8, 8)) * 2 + 1).astype(np.float32)
    m = random_mask(rng, 3, 8, 8)
    out = norm.rain_forward(_t(f), m, EPS).data
    fg_mu, fg_sd, bg_mu, bg_sd = _fg_bg_stats(out, m)
    _, _, in_bg_mu, in_bg_sd = _fg_bg_stats(f, m)
    np.testing.assert_allclose(fg_mu, bg_mu, atol=1e-4)
    np.testing.assert_allclose(fg_sd, bg_sd, atol=1e-3)
    np.testing.assert_allclose(bg_mu, in_bg_mu, atol=1e-6)
    bg = ~np.broadcast_to(m.astype(bool), f.shape)
    assert out[bg].tobytes() == f[bg].tobytes()


def test_rain_idempotent(rng):
    f = rng.standard_normal((2, 3, 8, 8)).astype(np.float32)
    m = random_mask(rng, 2, 8, 8)
    once = norm.rain_forward(_t(f), m, EPS)
    twice = norm.rain_forward(once, m, EPS)
    assert np.abs(twice.data - once.data).max() < 1e-4


def test_rain_empty_mask_falls_back_to_instance_norm(rng):
    f = _t(rng.standard_normal((2, 3, 4, 4)))
    out = norm.rain_forward(f, np.zeros((2, 1, 4, 4), np.float32), EPS)
    np.testing.assert_allclose(out.data, norm.instance_norm(f, EPS).data, atol=1e-6)


def test_rain_full_mask_falls_back_to_instance_norm(rng):
    f = _t(rng.standard_normal((1, 3, 4, 4)))
    out = norm.rain_forward(f, np.ones((1, 1, 4, 4), np.float32), EPS)
    np.testing.assert_allclose(out.data, norm.instance_norm(f, EPS).data, atol=1e-6)


def test_fallback_single_pixel_foreground(rng):
    f = _t(rng.standard_normal((1, 2, 4, 4)))
    m = np.zeros((1, 1, 4, 4), np.float32)
    m[0, 0, 1, 2] = 1
    assert norm.needs_fallback(m, 2).tolist() == [True]
    out = norm.rain_forward(f, m, EPS, min_pixels=2)
    np.testing.assert_allclose(out.data, norm.instance_norm(f, EPS).data, atol=1e-6)


def test_fallback_not_taken_for_half_mask(rng):
    f = _t(rng.standard_normal((1, 2, 4, 4)))
    m = np.zeros((1, 1, 4, 4), np.float32)
    m[:, :, :2] = 1
    assert norm.needs_fallback(m, 2).tolist() == [False]
    out = norm.rain_forward(f, m, EPS, min_pixels=2).data
    assert out[:, :, 2:].tobytes() == f.data[:, :, 2:].tobytes()


def test_min_pixels_zero_never_falls_back_on_nonempty_regions():
    m = np.zeros((1, 1, 4, 4), np.float32)
    m[0, 0, 0, 0] = 1
    assert norm.needs_fallback(m, 0).tolist() == [False]
    assert norm.needs_fallback(np.zeros((1, 1, 4, 4)), 0).tolist() == [True]


def test_fallback_is_per_sample(rng):
    f = _t(rng.standard_normal((2, 2, 4, 4)))
    m = np.zeros((2, 1, 4, 4), np.float32)
    m[0, :, :2] = 1  # sample 0 valid, sample 1 empty
    out = norm.rain_forward(f, m, EPS).data
    np.testing.assert_allclose(out[1], norm.instance_norm(f, EPS).data[1], atol=1e-6)
    assert out[0, :, 2:].tobytes() == f.data[0, :, 2:].tobytes()


def test_rain_gradients_through_all_statistics(rng):
    f = rng.standard_normal((2, 3, 6, 6))
    m = random_mask(rng, 2, 6, 6, 0.2, 0.5).astype(np.float64)
    w = rng.standard_normal((2, 3, 6, 6))
    err = check_gradients(lambda t: (norm.rain_forward(t[0], m, EPS) * w).sum(), [f], rng, probes=40)
    assert err < 1e-3


def test_rain_gradient_has_background_path(rng):
    # foreground output depends on the background through bg_mean / bg_std
    f = T.Tensor(rng.standard_normal((1, 1, 4, 4)), requires_grad=True)
    m = np.zeros((1, 1, 4, 4))
    m[:, :, :2] = 1
    out = norm.rain_forward(f, m, EPS)
    (out * m).sum().backward()
    assert np.abs(f.grad[0, 0, 2:]).sum() > 0


def test_rain_literal_variance_gradients(rng):
    f = rng.standard_normal((1, 2, 5, 5))
    m = random_mask(rng, 1, 5, 5, 0.3, 0.5).astype(np.float64)
    w = rng.standard_normal((1, 2, 5, 5))
    err = check_gradients(
        lambda t: (norm.rain_forward(t[0], m, EPS, literal_variance=True) * w).sum(), [f], rng, probes=25
    )
    assert err < 1e-3


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 3), st.integers(1, 4), st.sampled_from([6, 8, 12]))
def test_rain_alignment_property(seed, n, c, hw):
    rng = np.random.default_rng(seed)
    f = (rng.standard_normal((n, c, hw, hw)) * rng.uniform(0.5, 3) + rng.uniform(-2, 2)).astype(np.float32)
    m = random_mask(rng, n, hw, hw)
    out = norm.rain_forward(_t(f), m, EPS).data
    assert out.shape == f.shape
    fg_mu, fg_sd, bg_mu, bg_sd = _fg_bg_stats(out, m)
    assert np.abs(fg_mu - bg_mu).max() < 1e-4
    assert np.abs(fg_sd - bg_sd).max() < 1e-3


# instance / batch / region norm --------------------------------------------


def test_instance_norm_constant_channel_is_zero():
    out = norm.instance_norm(_t(np.full((1, 2, 3, 3), 4.0)), EPS).data
    np.testing.assert_array_equal(out, 0.0)


def test_instance_norm_moments(rng):
    f = rng.standard_normal((2, 3, 8, 8)) * 3 + 2
    out = norm.instance_norm(T.Tensor(f), EPS).data
    np.testing.assert_allclose(out.mean(axis=(2, 3)), 0, atol=1e-4)
    np.testing.assert_allclose(out.std(axis=(2, 3)), 1, atol=1e-4)


def test_instance_norm_affine_gradients(rng):
    f = rng.standard_normal((2, 3, 4, 4))
    s, b = rng.uniform(0.5, 1.5, (1, 3, 1, 1)), rng.standard_normal((1, 3, 1, 1))
    w = rng.standard_normal(f.shape)
    assert check_gradients(lambda t: (norm.instance_norm(t[0], EPS, t[1], t[2]) * w).sum(), [f, s, b], rng) < 1e-3


def test_batch_norm_identical_samples_training_is_zero(rng):
    one = rng.standard_normal((1, 2, 1, 1))
    f = np.broadcast_to(one, (4, 2, 3, 3)).copy()
    np.testing.assert_allclose(norm.batch_norm(T.Tensor(f), EPS).data, 0.0, atol=1e-6)


def test_batch_norm_running_stat_momentum(rng):
    f = rng.standard_normal((4, 3, 5, 5)) * 2 + 1
    rm, rv = np.zeros((1, 3, 1, 1)), np.ones((1, 3, 1, 1))
    norm.batch_norm(T.Tensor(f), EPS, running_mean=rm, running_var=rv, momentum=0.1)
    np.testing.assert_allclose(rm[0, :, 0, 0], 0.9 * 0 + 0.1 * f.mean(axis=(0, 2, 3)), atol=1e-12)
    np.testing.assert_allclose(rv[0, :, 0, 0], 0.9 * 1 + 0.1 * f.var(axis=(0, 2, 3)), atol=1e-12)


def test_batch_norm_eval_before_training_uses_init_stats(rng):
    f = rng.standard_normal((2, 2, 3, 3)).astype(np.float32)
    layer = norm.BatchNorm(2).eval()
    np.testing.assert_allclose(layer(_t(f)).data, f / np.sqrt(1 + EPS), atol=1e-6)


def test_batch_norm_train_eval_parity(rng):
    f = _t(rng.standard_normal((4, 3, 6, 6)) * 1.5 + 0.7)
    layer = norm.BatchNorm(3)
    for _ in range(200):
        train_out = layer(f)
    layer.eval()
    np.testing.assert_allclose(layer(f).data, train_out.data, atol=1e-3)


def test_batch_norm_gradients(rng):
    f = rng.standard_normal((3, 2, 4, 4))
    w = rng.standard_normal(f.shape)
    s, b = rng.uniform(0.5, 1.5, (1, 2, 1, 1)), rng.standard_normal((1, 2, 1, 1))
    assert check_gradients(lambda t: (norm.batch_norm(t[0], EPS, t[1], t[2]) * w).sum(), [f, s, b], rng) < 1e-3


def test_rn_destroys_constant_contrast():
    m = np.zeros((2, 1, 4, 4), np.float32)
    m[:, :, :2] = 1
    f = np.where(m.astype(bool), 3.0, -1.0).astype(np.float32)
    np.testing.assert_allclose(norm.region_norm_rn(_t(f), m, EPS).data, 0.0, atol=1e-6)


def test_rn_full_mask_equals_batch_norm(rng):
    f = _t(rng.standard_normal((3, 2, 4, 4)))
    out = norm.region_norm_rn(f, np.ones((3, 1, 4, 4), np.float32), EPS)
    np.testing.assert_allclose(out.data, norm.batch_norm(f, EPS).data, atol=1e-6)


def test_rn_region_means_are_zero(rng):
    f = rng.standard_normal((3, 2, 6, 6)) + 4
    m = random_mask(rng, 3, 6, 6)
    out = norm.region_norm_rn(T.Tensor(f), m, EPS).data
    fg = np.broadcast_to(m.astype(bool), f.shape)
    for c in range(2):
        assert abs(out[:, c][fg[:, c]].mean()) < 1e-4
        assert abs(out[:, c][~fg[:, c]].mean()) < 1e-4


def test_rn_has_no_cross_region_flow(rng):
    f = T.Tensor(rng.standard_normal((2, 1, 4, 4)), requires_grad=True)
    m = np.zeros((2, 1, 4, 4))
    m[:, :, :2] = 1
    (norm.region_norm_rn(f, m, EPS) * m).sum().backward()
    assert not f.grad[:, :, 2:].any()


def test_rn_gradients(rng):
    f = rng.standard_normal((2, 2, 5, 5))
    m = random_mask(rng, 2, 5, 5, 0.2, 0.5).astype(np.float64)
    w = rng.standard_normal(f.shape)
    assert check_gradients(lambda t: (norm.region_norm_rn(t[0], m, EPS) * w).sum(), [f], rng, probes=25) < 1e-3


@pytest.mark.parametrize("kind", list(norm.NormKind))
def test_every_layer_preserves_shape(rng, kind):
    f = _t(rng.standard_normal((2, 3, 8, 8)))
    m = random_mask(rng, 2, 8, 8)
    layer = norm.make_norm(kind, 3)
    assert layer(f, m).shape == f.shape


def test_rain_has_no_parameters_others_do():
    assert norm.make_norm("RAIN", 4).parameters() == []
    for kind in ("IN", "BN", "RN"):
        params = norm.make_norm(kind, 4).parameters()
        assert [p.shape for p in params] == [(1, 4, 1, 1)] * 2


def test_stats_dump_csv(rng, tmp_path):
    f = rng.standard_normal((2, 2, 4, 4)).astype(np.float32)
    m = random_mask(rng, 2, 4, 4)
    out = norm.rain_forward(_t(f), m, EPS).data
    path = tmp_path / "stats.csv"
    norm.write_stats_csv(path, [(3, out, m)])
    lines = path.read_text().splitlines()
    assert lines[0] == "layer,channel,fg_mean,fg_std,bg_mean,bg_std"
    assert len(lines) == 3
    vals = [float(v) for v in lines[1].split(",")[2:]]
    assert vals[0] == pytest.approx(vals[2], abs=2e-6)
