import sys
import tempfile
from pathlib import Path

import numpy as np

import tfk


def test_phantom_and_growth():
    tissue = tfk.make_phantom(16)
    assert tissue.shape == (16, 16, 16)
    assert set(np.unique(tissue)) == {0, 1, 2, 3}
    z, y, x = np.argwhere(tissue == 3)[0]
    snaps = tfk.simulate(tissue, seed_center=(float(x), float(y), float(z)), t_end=20.0, snapshot_every=10.0)
    assert [t for t, _ in snaps] == [0.0, 10.0, 20.0]
    masses = [c.sum() for _, c in snaps]
    assert masses == sorted(masses)
    assert all(0.0 <= c.min() and c.max() <= 1.0 for _, c in snaps)
    assert (snaps[-1][1][tissue == 0] == 0.0).all()


def test_reaction_step():
    tissue = np.full((2, 2, 2), 3, dtype=np.uint8)
    c = np.full((2, 2, 2), 0.1)
    out = tfk.fk_step(c, np.zeros_like(c), tissue, 0.03, 1.0)
    assert np.allclose(out, 0.1 + 0.03 * 0.1 * 0.9, rtol=0, atol=1e-15)


def test_metrics():
    a = np.zeros((4, 4, 4), dtype=np.uint8)
    b = np.zeros_like(a)
    a.flat[[0, 1, 2, 3]] = 1
    b.flat[[2, 3, 4, 5]] = 1
    assert tfk.dice(a, b) == 0.5
    x = np.zeros((4, 4, 4))
    assert tfk.psnr(x, x + 0.1) == 20.0
    assert tfk.psnr(x, x) == 99.0
    img = np.random.default_rng(0).random((16, 16, 16))
    assert tfk.ms_ssim(img, img, levels=2) == 1.0


def test_errors():
    try:
        tfk.psnr(np.zeros((4, 4, 4)), np.zeros((4, 4, 4)), mask=np.zeros((4, 4, 4), dtype=np.uint8))
    except tfk.TfkError as e:
        assert e.args[1] == "EmptyMask"
    else:
        raise AssertionError("expected TfkError")


def test_volume_io_and_cli():
    with tempfile.TemporaryDirectory() as d:
        p = Path(d) / "v.f32"
        arr = np.random.default_rng(1).random((3, 4, 5))
        tfk.write_volume(p, arr)
        back = tfk.read_volume(p)
        assert back.shape == (3, 4, 5)
        assert np.array_equal(back, arr.astype(np.float32).astype(np.float64))
        assert tfk.run_cli(["--version"]) == 0
        assert tfk.run_cli(["no-such-command"]) == 2


if __name__ == "__main__":
    failures = 0
    for name, fn in sorted(globals().items()):
        if name.startswith("test_") and callable(fn):
            try:
                fn()
                print(f"ok   {name}")
            except Exception as e:  # noqa: BLE001
                failures += 1
                print(f"FAIL {name}: {e!r}")
    sys.exit(1 if failures else 0)
