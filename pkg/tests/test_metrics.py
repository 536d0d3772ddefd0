import json
import math

import numpy as np
import pytest
import torch

from s2bnet import metrics as M
from s2bnet.data import make_dataset
from s2bnet.tensor import bilinear_upsample


@pytest.fixture
def pair(rng):
    g = rng.uniform(0.1, 0.9, (4, 32, 32))
    return g, np.clip(g + rng.normal(0, 0.05, g.shape), 0, 1)


def test_psnr_points():
    g = np.full((4, 8, 8), 0.3)
    assert M.psnr(g, g + 0.1) == pytest.approx(20.0)
    assert M.psnr(g, g) == M.PSNR_CAP


def test_psnr_loop_oracle(pair):
    g, h = pair
    total, n = 0.0, 0
    for v in np.ndindex(g.shape):
        total += (g[v] - h[v]) ** 2
        n += 1
    assert abs(M.psnr(g, h) - 10 * math.log10(1 / (total / n))) < 1e-6
    assert M.psnr(g, h) == M.psnr(h, g)


def test_sam_points(pair):
    g, h = pair
    assert M.sam(g, g) == pytest.approx(0.0, abs=1e-6)
    assert M.sam(g, 2 * g) == pytest.approx(0.0, abs=1e-6)
    a = np.zeros((2, 1, 1)); a[0] = 1
    b = np.zeros((2, 1, 1)); b[1] = 1
    assert M.sam(a, b) == pytest.approx(90.0)
    assert M.sam(g, h) == pytest.approx(M.sam(h, g))


def test_sam_skips_zero_pixels():
    a = np.ones((2, 1, 2)); a[:, 0, 1] = 0
    b = np.ones((2, 1, 2))
    assert M.sam(a, b) == pytest.approx(0.0, abs=1e-6)


def test_ergas_points():
    g = np.full((1, 4, 4), 2.0)
    h = g.copy(); h[0, ::2] += 2.0; h[0, 1::2] -= 2.0
    assert M.ergas(g, h, 4) == pytest.approx(25.0)
    assert M.ergas(g, g) == 0.0


def test_ergas_loop_oracle(pair):
    g, h = pair
    acc = 0.0
    for b in range(4):
        mu = sum(g[b].ravel()) / g[b].size
        mse = sum((x - y) ** 2 for x, y in zip(g[b].ravel(), h[b].ravel())) / g[b].size
        acc += mse / mu**2
    assert abs(M.ergas(g, h, 4) - 25 * math.sqrt(acc / 4)) < 1e-6


def test_ergas_excludes_zero_mean_band(pair):
    g, h = pair
    g = g.copy(); g[2] = 0
    value, excluded = M.ergas_detail(g, h)
    assert excluded == [2] and math.isfinite(value)
    _, flags = M.evaluate_pair(h, h[:, ::4, ::4], h[:1], gt=g)
    assert any("ergas_excluded" in f for f in flags)


def test_identity_fixtures(pair):
    g, _ = pair
    assert M.ssim(g, g) == pytest.approx(1.0)
    assert M.q_index(g[0], g[0]) == pytest.approx(1.0)
    assert M.q4(g, g) == pytest.approx(1.0)


def test_q_anticorrelated():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((32, 32))
    a -= a.mean()
    assert M.q_index(a, -a) == pytest.approx(-1.0)


def q_oracle(x, y):
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    vx = sum((v - mx) ** 2 for v in x) / n
    vy = sum((v - my) ** 2 for v in y) / n
    cxy = sum((a - mx) * (b - my) for a, b in zip(x, y)) / n
    return 4 * cxy * mx * my / ((vx + vy) * (mx**2 + my**2))


def test_q_fixed_8x8_two_band():
    r = np.random.default_rng(42)
    img = r.uniform(0, 1, (2, 8, 8))
    expected = q_oracle(list(img[0].ravel()), list(img[1].ravel()))
    assert abs(M.q_index(img[0], img[1]) - expected) < 1e-12


def _left_matrix(q):
    a, b, c, d = q
    return np.array([[a, -b, -c, -d], [b, a, -d, c], [c, d, a, -b], [d, -c, b, a]])


def q4_oracle(x, y):
    x, y = x.reshape(4, -1), y.reshape(4, -1)
    n = x.shape[1]
    mx, my = x.mean(1), y.mean(1)
    cov = np.zeros(4)
    vx = vy = 0.0
    for p in range(n):
        dx, dy = x[:, p] - mx, y[:, p] - my
        conj = dy * np.array([1, -1, -1, -1])
        cov += _left_matrix(dx) @ conj
        vx += dx @ dx
        vy += dy @ dy
    cov, vx, vy = cov / n, vx / n, vy / n
    nmx, nmy = np.linalg.norm(mx), np.linalg.norm(my)
    return np.linalg.norm(cov) / math.sqrt(vx * vy) * 2 * nmx * nmy / (nmx**2 + nmy**2) * 2 * math.sqrt(vx * vy) / (vx + vy)


def test_q4_matches_matrix_oracle(rng):
    x = rng.uniform(0, 1, (4, 16, 16))
    y = np.clip(x + rng.normal(0, 0.2, x.shape), 0, 1)
    assert abs(M.q4(x, y, block=16) - q4_oracle(x, y)) < 1e-10


def test_size_and_band_errors():
    with pytest.raises(ValueError):
        M.ssim(np.zeros((1, 8, 8)), np.zeros((1, 8, 8)))
    with pytest.raises(ValueError):
        M.q4(np.zeros((3, 16, 16)), np.zeros((3, 16, 16)))
    with pytest.raises(ValueError):
        M.d_lambda(np.zeros((1, 32, 32)), np.zeros((1, 8, 8)))
    with pytest.raises(ValueError):
        M.psnr(np.zeros(3), np.zeros(4))


def test_qnr_points():
    assert M.qnr(0.0, 0.0) == 1.0
    assert abs(M.qnr(0.0655, 0.0680) - 0.8710) <= 0.001
    assert abs(M.qnr(0.0655, 0.0680) - 0.8714) <= 0.001


def test_d_lambda_consistent_pair():
    for p in make_dataset(4, 64, seed=3):
        up = bilinear_upsample(torch.from_numpy(p.lrms[None]), 4)[0].numpy()
        assert M.d_lambda(up, p.lrms) < 0.02


def test_no_reference_ranges():
    for p in make_dataset(2, 64, seed=8):
        dl, ds = M.d_lambda(p.gt, p.lrms), M.d_s(p.gt, p.lrms, p.pan)
        assert 0 <= dl <= 1 and 0 <= ds <= 1 and 0 <= M.qnr(dl, ds) <= 1


def test_monotone_under_noise(rng):
    g = make_dataset(1, 64, seed=0)[0].gt.astype(np.float64)
    noise = rng.standard_normal(g.shape)
    levels = [0.01, 0.02, 0.04, 0.08, 0.16]
    p = [M.psnr(g, g + s * noise) for s in levels]
    s = [M.ssim(g, g + s * noise) for s in levels]
    assert all(a > b for a, b in zip(p, p[1:]))
    assert all(a > b for a, b in zip(s, s[1:]))


def test_report_schema(pair):
    g, h = pair
    row, flags = M.evaluate_pair(h, g[:, ::4, ::4], g[:1], gt=g)
    rep = M.report([row, row], flags)
    doc = json.loads(rep.to_json())
    assert doc["schema_version"] == 1
    assert set(doc["metrics"]) == set(M.REDUCED + M.FULL)
    assert doc["config"]["samples"] == 2
    assert -1 <= doc["metrics"]["ssim"] <= 1 and doc["metrics"]["sam"] >= 0


def test_report_without_gt_has_only_qnr_family(pair):
    g, h = pair
    row, _ = M.evaluate_pair(h, g[:, ::4, ::4], g[:1])
    assert set(M.report([row]).values) == set(M.FULL)
