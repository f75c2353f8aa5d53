import numpy as np
import pytest

from rainkit import tensor as T
from rainkit.losses import hinge_d, hinge_g, rec_loss, ver_loss_g
from oracles import loop_hinge, loop_l1


def _t(a):
    return T.Tensor(np.asarray(a, dtype=np.float64))


def test_rec_trivial(rng):
    x = rng.standard_normal((2, 3, 4, 4))
    assert rec_loss(_t(x), x).item() == 0
    assert rec_loss(_t(x + 0.5), x).item() == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(T.ShapeError):
        rec_loss(_t(x), x[:1])


@pytest.mark.parametrize("seed", range(5))
def test_rec_matches_loop(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, 3, 5, 5)), rng.standard_normal((2, 3, 5, 5))
    assert abs(rec_loss(_t(a), b).item() - loop_l1(a, b)) < 1e-6


def test_hinge_trivial():
    assert hinge_d(_t([1.0, 1.0]), _t([-1.0, -1.0])).item() == 0
    assert hinge_d(_t([0.0]), _t([0.0])).item() == 2


@pytest.mark.parametrize("seed", range(10))
def test_hinge_matches_loop(seed):
    rng = np.random.default_rng(seed)
    real, fake = rng.normal(0, 2, 6), rng.normal(0, 2, 6)
    d, g = loop_hinge(real, fake)
    assert abs(hinge_d(_t(real), _t(fake)).item() - d) < 1e-6
    assert abs(hinge_g(_t(fake)).item() - g) < 1e-6


def test_hinge_zero_iff_margins(rng):
    for _ in range(50):
        real, fake = rng.normal(1, 1, 4), rng.normal(-1, 1, 4)
        d = hinge_d(_t(real), _t(fake)).item()
        assert d >= 0
        assert (d == 0) == (bool(np.all(real >= 1)) and bool(np.all(fake <= -1)))


def test_ver_g_monotone():
    class Const:
        def __init__(self, s):
            self.s = s

        def __call__(self, img, mask):
            return _t(np.full((2, 1, 1, 1), self.s))

    img = _t(np.zeros((2, 3, 4, 4)))
    vals = [ver_loss_g(Const(s), img, None).item() for s in (-1.0, 0.0, 2.0)]
    assert vals[0] > vals[1] > vals[2]
