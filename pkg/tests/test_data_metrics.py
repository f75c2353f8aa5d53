import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from rainkit import metrics as M
from rainkit.data import (
    JitterParams,
    JitterSpec,
    compose,
    load_dataset_dir,
    load_image,
    load_mask,
    save_dataset_dir,
    save_image,
    synth_dataset,
    to_uint8,
    to_unit,
)
from oracles import loop_compose, loop_errors, loop_ssim


def _img8(rng, h=16, w=16):
    return rng.integers(0, 256, (3, h, w)).astype(np.float64)


def _mask(rng, h=16, w=16, p=0.3):
    m = (rng.random((1, h, w)) < p).astype(np.float32)
    m[0, 0, 0] = 1
    return m


# ---- compose ---------------------------------------------------------------


def test_compose_extremes(rng):
    fg, bg = rng.random((3, 8, 8)), rng.random((3, 8, 8))
    assert np.array_equal(compose(fg, bg, np.zeros((1, 8, 8))), bg)
    assert np.array_equal(compose(fg, bg, np.ones((1, 8, 8))), fg)


def test_compose_half_mask(rng):
    fg, bg = rng.random((3, 6, 6)), rng.random((3, 6, 6))
    m = np.zeros((1, 6, 6))
    m[:, :, :3] = 1
    out = compose(fg, bg, m)
    assert np.array_equal(out[:, :, :3], fg[:, :, :3]) and np.array_equal(out[:, :, 3:], bg[:, :, 3:])
    assert np.array_equal(out, loop_compose(fg, bg, m))


def test_compose_errors(rng):
    with pytest.raises(ValueError):
        compose(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)), np.zeros((1, 4, 4)))
    with pytest.raises(ValueError, match="binary"):
        compose(np.zeros((3, 4, 4)), np.zeros((3, 4, 4)), np.full((1, 4, 4), 0.5))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**16))
def test_compose_idempotent(seed):
    rng = np.random.default_rng(seed)
    fg, bg, m = rng.random((3, 7, 9)), rng.random((3, 7, 9)), _mask(rng, 7, 9)
    once = compose(fg, bg, m)
    assert np.array_equal(compose(once, bg, m), once)


# ---- jitter and synthesis --------------------------------------------------


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**16))
def test_jitter_invertible(seed):
    rng = np.random.default_rng(seed)
    params = JitterSpec().sample(rng)
    x = rng.uniform(0.01, 0.99, (3, 5, 5))
    y = params.apply(x)
    assert np.all((y > 0) & (y < 1))
    np.testing.assert_allclose(params.invert(y), x, atol=1e-7)


def test_identity_jitter_composite_equals_gt():
    for s in synth_dataset(10, 32, seed=3, jitter=JitterSpec.identity()):
        assert np.array_equal(s.composite, s.target)
        assert M.psnr(to_uint8(s.composite), to_uint8(s.target)) == M.PSNR_CAP


def test_synthesis_deterministic():
    a = synth_dataset(5, 32, seed=11)
    b = synth_dataset(5, 32, seed=11)
    for x, y in zip(a, b):
        assert np.array_equal(x.composite, y.composite) and np.array_equal(x.mask, y.mask)
        assert np.array_equal(x.target, y.target)


def test_synthesis_invariants():
    samples = synth_dataset(40, 32, seed=5)
    for s in samples:
        bg = np.broadcast_to(s.mask == 0, s.composite.shape)
        assert np.array_equal(s.composite[bg], s.target[bg])
        assert set(np.unique(s.mask)) <= {0.0, 1.0}
        assert 0 < s.foreground_ratio < 1
    assert any(not np.array_equal(s.composite, s.target) for s in samples)


def test_mask_ratio_covers_all_buckets():
    samples = synth_dataset(500, 64, seed=0)
    counts = {name: 0 for name, _, _ in M.BUCKETS}
    for s in samples:
        counts[M.bucket_of(s.foreground_ratio)] += 1
    assert all(v > 0 for v in counts.values()), counts


# ---- image files -----------------------------------------------------------


def test_image_round_trip(tmp_path, rng):
    u8 = rng.integers(0, 256, (3, 9, 7)).astype(np.uint8)
    save_image(tmp_path / "a.png", to_unit(u8))
    back = load_image(tmp_path / "a.png")
    assert np.array_equal(to_uint8(back), u8)


def test_unit_mapping_bound(rng):
    x = rng.uniform(-1, 1, 1000)
    assert np.abs(to_unit(to_uint8(x)) - x).max() <= 1 / 255 + 1e-7


def test_mask_threshold(tmp_path):
    arr = np.array([[127, 128], [0, 255]], np.uint8)
    Image.fromarray(arr, "L").save(tmp_path / "m.png")
    assert np.array_equal(load_mask(tmp_path / "m.png")[0], [[0, 1], [0, 1]])


def test_sixteen_bit_rejected(tmp_path):
    Image.fromarray(np.full((4, 4), 40000, np.uint16)).save(tmp_path / "deep.png")
    with pytest.raises(ValueError, match="8-bit"):
        load_image(tmp_path / "deep.png")


def test_dataset_dir_round_trip(tmp_path):
    samples = synth_dataset(3, 16, seed=2)
    save_dataset_dir(samples, tmp_path)
    back = load_dataset_dir(tmp_path)
    assert [s.id for s in back] == [s.id for s in samples]
    for a, b in zip(samples, back):
        assert np.array_equal(a.composite, b.composite) and np.array_equal(a.mask, b.mask)


# ---- metrics ---------------------------------------------------------------


def test_metric_basics(rng):
    a = _img8(rng)
    m = _mask(rng)
    assert M.mse(a, a) == M.fmse(a, a, m) == M.fl1(a, a, m) == 0
    assert M.psnr(a, a) == 100.0
    b = a + 2
    assert M.mse(a, b) == 4 and M.fmse(a, b, m) == 4 and M.fl1(a, b, m) == 2
    assert abs(M.psnr(a, b) - 10 * np.log10(255**2 / 4)) < 1e-12
    assert abs(M.psnr(a, b) - 42.11) < 0.01


def test_background_only_error(rng):
    a = _img8(rng)
    m = _mask(rng)
    b = np.where(m == 0, a + 5, a)
    assert M.fmse(a, b, m) == 0 and M.mse(a, b) > 0
    mse_o, fmse_o, _ = loop_errors(a, b, m)
    assert mse_o == pytest.approx(M.mse(a, b), abs=1e-12) and fmse_o == 0


def test_empty_mask_errors(rng):
    a = _img8(rng)
    with pytest.raises(ValueError):
        M.fmse(a, a, np.zeros((1, 16, 16)))
    with pytest.raises(ValueError):
        M.fl1(a, a, np.zeros((1, 16, 16)))


@pytest.mark.parametrize("seed", range(10))
def test_errors_match_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    a, b, m = _img8(rng), _img8(rng), _mask(rng)
    ref = loop_errors(a, b, m)
    np.testing.assert_allclose((M.mse(a, b), M.fmse(a, b, m), M.fl1(a, b, m)), ref, rtol=1e-12, atol=1e-6)


def test_psnr_monotone(rng):
    a = _img8(rng)
    errs = []
    for scale in (1, 3, 9, 27):
        b = np.clip(a + rng.normal(0, scale, a.shape), 0, 255)
        errs.append((M.mse(a, b), M.psnr(a, b)))
    errs.sort()
    assert all(p1 > p2 for (_, p1), (_, p2) in zip(errs, errs[1:]))


def test_ssim_properties(rng):
    a = _img8(rng, 24, 24)
    assert M.ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    assert M.ssim(a, 255 - a) < 0
    with pytest.raises(ValueError):
        M.ssim(a[:, :10, :10], a[:, :10, :10])


@pytest.mark.parametrize("seed", range(5))
def test_ssim_matches_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    a, b = _img8(rng, 20, 18), _img8(rng, 20, 18)
    b = 0.5 * a + 0.5 * b
    assert abs(M.ssim(a, b) - loop_ssim(a, b)) < 1e-6


def test_bucket_partition():
    assert M.bucket_of(0.0) == "0-5%" and M.bucket_of(0.05) == "5-15%"
    assert M.bucket_of(0.2999) == "15-30%" and M.bucket_of(0.3) == "30-100%" and M.bucket_of(1.0) == "30-100%"


def test_evaluate_identity_and_aggregates(tmp_path):
    samples = synth_dataset(30, 32, seed=9)
    report = M.evaluate(M.identity_harmonizer, samples)
    for row, s in zip(report.rows, samples):
        ref = M.image_metrics(to_uint8(s.composite).astype(float), to_uint8(s.target).astype(float), s.mask)
        assert (row.mse, row.fmse, row.fl1, row.ssim) == (ref.mse, ref.fmse, ref.fl1, ref.ssim)
        # background untouched: total squared error lives in the foreground
        assert row.mse == pytest.approx(row.fmse * row.fg_ratio, rel=1e-12)
    groups = report.bucket_rows()
    assert sum(len(v) for v in groups.values()) == len(samples)
    agg = report.aggregates()
    for name, rows in groups.items():
        if rows:
            assert agg[name]["fmse"] == np.mean([r.fmse for r in rows])
    report.write_images_csv(tmp_path / "img.csv")
    report.write_buckets_csv(tmp_path / "b.csv")
    lines = (tmp_path / "img.csv").read_text().splitlines()
    assert lines[0] == "id,fg_ratio,mse,fmse,psnr,fl1,ssim" and len(lines) == 31
    assert (tmp_path / "b.csv").read_text().splitlines()[-1].startswith("average,30,")


def test_background_preserving_total_abs_equals_foreground(rng):
    a = _img8(rng)
    m = _mask(rng)
    b = np.where(m == 1, np.clip(a + rng.normal(0, 9, a.shape), 0, 255), a)
    total = np.abs(a - b).sum()
    assert total == pytest.approx(M.fl1(a, b, m) * int(m.sum()) * 3, rel=1e-12)


def test_jitter_params_identity_flag():
    assert JitterParams().is_identity and not JitterParams(brightness=1.1).is_identity
