"""Adam behavior and the binary checkpoint container."""
import numpy as np
import pytest

from motionnet import nn


def test_zero_gradient_leaves_params_unchanged():
    p = nn.Parameter("w", np.array([1.0, -2.0]))
    opt = nn.Adam([p], lr=0.05)
    p.tensor.grad = np.zeros(2)
    assert opt.step()
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_quadratic_bowl_converges():
    p = nn.Parameter("w", np.array(1.0))
    opt = nn.Adam([p], lr=1e-2)
    for _ in range(500):
        opt.zero_grad()
        loss = nn.tsum(nn.mul(p.tensor, p.tensor))
        nn.backward(loss)
        opt.step()
    assert abs(float(p.data)) < 1e-3


def test_identical_seeds_bitwise_identical_params():
    def run():
        rng = np.random.default_rng(42)
        p = nn.Parameter("w", rng.standard_normal(5))
        opt = nn.Adam([p], lr=3e-3)
        for _ in range(25):
            opt.zero_grad()
            target = nn.Tensor(np.arange(5, dtype=np.float64))
            d = nn.sub(p.tensor, target)
            nn.backward(nn.tsum(nn.mul(d, d)))
            opt.step()
        return p.data.copy()

    a, b = run(), run()
    assert a.tobytes() == b.tobytes()


def test_non_finite_gradient_skips_step_and_warns():
    p = nn.Parameter("w", np.array([1.0]))
    opt = nn.Adam([p])
    p.tensor.grad = np.array([np.nan])
    with pytest.warns(RuntimeWarning, match="non-finite"):
        moved = opt.step()
    assert not moved
    assert opt.skipped_steps == 1
    np.testing.assert_array_equal(p.data, [1.0])
    # moment buffers untouched: a clean step afterwards behaves like the first
    p.tensor.grad = np.array([0.0])
    assert opt.step()
    np.testing.assert_array_equal(p.data, [1.0])


def test_checkpoint_roundtrip_bitwise(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {
        "lift.0.weight": rng.standard_normal((4, 13, 3, 3)),
        "lift.0.bias": rng.standard_normal(4),
        "scalar": np.array(3.5),
        "stats/mean": rng.standard_normal(7),
    }
    path = str(tmp_path / "model.mnckpt")
    nn.save_checkpoint(path, arrays)
    back = nn.load_checkpoint(path)
    assert list(back) == list(arrays)
    for k in arrays:
        assert back[k].tobytes() == np.ascontiguousarray(arrays[k]).tobytes()
        assert back[k].shape == arrays[k].shape

    # re-saving the loaded dict reproduces the file byte for byte
    path2 = str(tmp_path / "model2.mnckpt")
    nn.save_checkpoint(path2, back)
    assert open(path, "rb").read() == open(path2, "rb").read()


def test_checkpoint_detects_corruption(tmp_path):
    path = str(tmp_path / "m.mnckpt")
    nn.save_checkpoint(path, {"w": np.arange(6.0).reshape(2, 3)})
    raw = bytearray(open(path, "rb").read())
    raw[len(raw) // 2] ^= 0xFF
    open(path, "wb").write(bytes(raw))
    with pytest.raises(nn.CheckpointError, match="checksum"):
        nn.load_checkpoint(path)


def test_checkpoint_rejects_truncation_and_bad_magic(tmp_path):
    path = str(tmp_path / "m.mnckpt")
    nn.save_checkpoint(path, {"w": np.ones(3)})
    raw = open(path, "rb").read()
    open(path, "wb").write(raw[: len(raw) - 11])
    with pytest.raises(nn.CheckpointError):
        nn.load_checkpoint(path)
    open(path, "wb").write(b"NOTMAGIC" + raw[8:])
    with pytest.raises(nn.CheckpointError, match="magic"):
        nn.load_checkpoint(path)


def test_fnv1a_known_vectors():
    # classic published FNV-1a 64-bit test vectors
    assert nn.fnv1a64(b"") == 0xCBF29CE484222325
    assert nn.fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert nn.fnv1a64(b"foobar") == 0x85944171F73967E8
