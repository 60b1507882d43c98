import numpy as np
import pytest

from coseg import BACKEND, kernels
from coseg._util import kmeans, label_components, relabel_sequential
from coseg.pnm import PnmError, read_pnm, write_pgm, write_ppm
from coseg.vidcore import rgb_to_lab

from conftest import textured_frame

py = kernels.backend("python")
try:
    cy = kernels.backend("cython")
except ImportError:  # extension not built in this environment
    cy = None
needs_ext = pytest.mark.skipif(cy is None, reason="compiled kernels not built")


def test_backend_reported():
    assert BACKEND in ("python", "cython")


def _random_net(rng, n):
    m = int(rng.integers(n, 4 * n))
    tails = rng.integers(0, n, m)
    heads = rng.integers(0, n, m)
    keep = tails != heads
    tails, heads = tails[keep].astype(np.int64), heads[keep].astype(np.int64)
    caps = rng.integers(0, 50, len(tails)).astype(np.int64)
    rev = np.where(rng.random(len(tails)) < 0.5, caps, 0).astype(np.int64)
    return tails, heads, caps, rev


@needs_ext
def test_maxflow_backends_agree():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(3, 40))
        t, h, c, r = _random_net(rng, n)
        a = py.bk_maxflow(n, 0, n - 1, t, h, c, r)
        b = cy.bk_maxflow(n, 0, n - 1, t, h, c, r)
        assert a[0] == b[0]
        assert np.array_equal(a[1], b[1])
        assert np.array_equal(a[2], b[2])


@needs_ext
def test_slic_assign_backends_agree():
    lab = np.ascontiguousarray(rgb_to_lab(textured_frame(seed=3)), dtype=np.float64)
    h, w = lab.shape[:2]
    rng = np.random.default_rng(1)
    k = 30
    ys, xs = rng.uniform(0, h, k), rng.uniform(0, w, k)
    centers = np.column_stack([lab[ys.astype(int), xs.astype(int)], ys, xs])
    active = rng.random((h, w)) < 0.8
    la = np.full((h, w), -1, np.int32)
    lb = la.copy()
    da = py.slic_assign(lab, centers, 9.0, 10.0, active, la)
    db = cy.slic_assign(lab, centers, 9.0, 10.0, active, lb)
    assert np.array_equal(la, lb)
    assert np.allclose(da, db, equal_nan=True)


def test_kmeans_seeded_and_clipped():
    rng = np.random.default_rng(2)
    pts = np.concatenate([rng.normal(0, 0.1, (30, 2)), rng.normal(5, 0.1, (30, 2))])
    c1, a1 = kmeans(pts, 2, seed=3)
    c2, a2 = kmeans(pts, 2, seed=3)
    assert np.array_equal(c1, c2) and np.array_equal(a1, a2)
    assert len(set(a1[:30])) == 1 and len(set(a1[30:])) == 1 and a1[0] != a1[-1]
    c, a = kmeans(np.ones((5, 3)), 4)
    assert len(c) == 1 and (a == 0).all()


def test_label_components():
    lab = np.array([[1, 1, 2], [3, 1, 2], [1, 3, 3]])
    comp, n = label_components(lab)
    assert n == 5
    assert comp[0, 0] == comp[1, 1] and comp[2, 0] != comp[0, 0]


def test_relabel_sequential():
    assert relabel_sequential(np.array([7, 7, 2, 9, 2])).tolist() == [0, 0, 1, 2, 1]


def test_pnm_round_trip(tmp_path):
    rgb = np.random.default_rng(0).integers(0, 256, (5, 7, 3), dtype=np.uint8)
    write_ppm(tmp_path / "a.ppm", rgb)
    assert np.array_equal(read_pnm(tmp_path / "a.ppm"), rgb)
    wide = np.arange(35, dtype=np.uint16).reshape(5, 7) * 1000
    write_pgm(tmp_path / "b.pgm", wide)
    assert np.array_equal(read_pnm(tmp_path / "b.pgm"), wide)
    (tmp_path / "c.pgm").write_bytes(b"P5\n4 4\n255\n\x00\x01")
    with pytest.raises(PnmError):
        read_pnm(tmp_path / "c.pgm")
    (tmp_path / "d.pgm").write_bytes(b"hello")
    with pytest.raises(PnmError):
        read_pnm(tmp_path / "d.pgm")
