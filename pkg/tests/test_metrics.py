import json

import numpy as np
import pytest

from promptseg.metrics import EvalReport, boundary, dsc, nsd


def brute_boundary(m):
    h, w = m.shape
    out = np.zeros_like(m, dtype=bool)
    for r in range(h):
        for c in range(w):
            if not m[r, c]:
                continue
            for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                rr, cc = r + dr, c + dc
                if not (0 <= rr < h and 0 <= cc < w) or not m[rr, cc]:
                    out[r, c] = True
    return out


def brute_nsd(a, b, tol):
    if not a.any() and not b.any():
        return 1.0
    if a.any() != b.any():
        return 0.0
    pa = np.argwhere(brute_boundary(a))
    pb = np.argwhere(brute_boundary(b))
    d = np.sqrt(((pa[:, None, :] - pb[None, :, :]) ** 2).sum(-1))
    hits = (d.min(axis=1) <= tol).sum() + (d.min(axis=0) <= tol).sum()
    return hits / (len(pa) + len(pb))


def random_mask(rng, n=32):
    m = np.zeros((n, n), dtype=bool)
    for _ in range(rng.integers(1, 4)):
        r0, c0 = rng.integers(0, n - 2, size=2)
        m[r0: r0 + rng.integers(1, n - r0), c0: c0 + rng.integers(1, n - c0)] = True
    return m ^ (rng.random((n, n)) < 0.05)


def test_dsc_examples():
    a = np.zeros((20, 20), bool)
    a[:10, :10] = True
    assert dsc(a, a) == 1
    assert dsc(a, np.roll(a, 10, 0)) == 0
    assert dsc(np.zeros((3, 3)), np.zeros((3, 3))) == 1
    b = np.zeros((20, 20), bool)
    b[5:15, :10] = True
    assert dsc(a, b) == 0.5


def test_boundary_matches_brute(rng):
    for _ in range(20):
        m = random_mask(rng, 16)
        np.testing.assert_array_equal(boundary(m), brute_boundary(m))


def test_nsd_examples():
    a = np.zeros((200, 200), bool)
    a[10:20, 10:20] = True
    assert nsd(a, a, 0.5) == 1
    far = np.zeros_like(a)
    far[10, 130] = True
    one = np.zeros_like(a)
    one[10, 10] = True
    assert nsd(one, far, 2.0) == 0
    assert nsd(a, np.roll(a, 1, 1), 2.0) == 1.0
    assert nsd(a, np.zeros_like(a)) == 0
    assert nsd(np.zeros_like(a), np.zeros_like(a)) == 1


@pytest.mark.parametrize("tol", [1.0, 2.0, 3.5])
def test_nsd_matches_brute_force(tol):
    rng = np.random.default_rng(int(tol * 10))
    for _ in range(15):
        a, b = random_mask(rng), random_mask(rng)
        assert nsd(a, b, tol) == pytest.approx(brute_nsd(a, b, tol), abs=1e-12)


def test_metrics_symmetric(rng):
    for _ in range(10):
        a, b = random_mask(rng), random_mask(rng)
        assert dsc(a, b) == dsc(b, a)
        assert nsd(a, b) == nsd(b, a)


def test_nsd_rejects_nonpositive_tol():
    with pytest.raises(ValueError):
        nsd(np.ones((2, 2)), np.ones((2, 2)), 0)


def test_report_outputs(tmp_path):
    r = EvalReport()
    r.add("a", 1.0, 0.5, 0.1)
    r.add("b", 0.0, 0.5, 0.3)
    assert r.mean_dsc == 0.5 and r.mean_nsd == 0.5
    r.write_csv(tmp_path / "r.csv")
    r.write_json(tmp_path / "r.json")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "case_id,dsc,nsd,seconds" and len(lines) == 3
    assert json.loads((tmp_path / "r.json").read_text())["cases"] == 2
