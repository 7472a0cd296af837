#!/usr/bin/env python3
"""Build the fann_py extension if needed, import it, and exercise the API
end to end: distance functions, a single-scale index round trip, and a
scale-free ladder query checked against a brute-force scan.

Run from anywhere: python3 python/smoke_test.py
"""

import math
import pathlib
import shutil
import subprocess
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parents[1]


def ensure_module():
    so = ROOT / "target" / "debug" / "libfann_py.so"
    sources = list((ROOT / "crates" / "py" / "src").glob("*.rs"))
    stale = not so.exists() or any(
        s.stat().st_mtime > so.stat().st_mtime for s in sources
    )
    if stale:
        subprocess.run(
            ["cargo", "build", "-p", "fann-py"], cwd=ROOT, check=True
        )
    dest = pathlib.Path(__file__).parent / "fann_py.so"
    if not dest.exists() or so.stat().st_mtime > dest.stat().st_mtime:
        shutil.copy2(so, dest)
    sys.path.insert(0, str(dest.parent))
    import fann_py

    return fann_py


def brute_nearest(fann_py, corpus, sigma):
    best = None
    for i, c in enumerate(corpus):
        d = fann_py.frechet_value(sigma, c, 1e-9)
        if best is None or d < best[1]:
            best = (i, d)
    return best


def main():
    fann_py = ensure_module()

    # Two parallel unit segments 0.3 apart.
    a = [[0.0, 0.0], [1.0, 0.0]]
    b = [[0.0, 0.3], [1.0, 0.3]]
    v = fann_py.frechet_value(a, b, 1e-9)
    assert math.isclose(v, 0.3, abs_tol=1e-7), v
    assert fann_py.frechet_decide(a, b, 0.31)
    assert not fann_py.frechet_decide(a, b, 0.29)
    assert fann_py.discrete_frechet(a, b) >= v - 1e-9

    corpus = [
        [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]],
        [[-1.0, -1.0], [-1.0, 0.0]],
        [[2.0, 2.0], [3.0, 2.0]],
    ]
    idx = fann_py.Index.build(corpus, eps=0.4, delta=0.5, k=3)
    assert idx.variant == "three-eps" and idx.k == 3

    near = [[0.05, 0.02], [0.98, 0.05], [1.02, 0.97]]  # hugs corpus[0]
    far = [[40.0, 40.0], [41.0, 40.0], [41.0, 41.0]]
    hit = idx.query(near)
    assert hit is not None, "near query fell through"
    d_hit = fann_py.frechet_value(near, corpus[hit], 1e-9)
    assert d_hit <= (3 + 24 * 0.4) * 0.5 + 1e-6, d_hit
    assert idx.query(far) is None

    with tempfile.TemporaryDirectory() as td:
        path = pathlib.Path(td) / "single.idx"
        idx.save(path)
        again = fann_py.Index.load(path, corpus)
        for q in (near, far):
            assert again.query(q) == idx.query(q)

        ladder = fann_py.Ladder.build(corpus, eps=0.4, k=3)
        assert ladder.num_scales >= 2 and ladder.delta0() > 0
        pos, scale = ladder.query(near)
        d_ret = fann_py.frechet_value(near, corpus[pos], 1e-9)
        _, d_opt = brute_nearest(fann_py, corpus, near)
        bound = (3 + 24 * 0.4) * (1 + 0.4) * max(d_opt, ladder.delta0())
        assert d_ret <= bound + 1e-6, (d_ret, bound)

        ldir = pathlib.Path(td) / "ladder"
        ladder.save(ldir)
        reladder = fann_py.Ladder.load(ldir, corpus)
        assert reladder.query(near) == ladder.query(near)

    # Bad input surfaces as ValueError, not a crash.
    try:
        fann_py.frechet_value([[0.0, 0.0]], [[0.0]], 1e-9)
    except ValueError:
        pass
    else:
        raise AssertionError("dimension mismatch was accepted")

    print("smoke test passed:", fann_py.__version__)


if __name__ == "__main__":
    main()
