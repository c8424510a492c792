import struct

import numpy as np
import pytest

from protshape import gvae
from protshape.nn.checkpoint import MAGIC, VERSION, CheckpointError, dumps, load, loads, save
from protshape.resnet_warp import ResNetTW, build_resnet


def test_round_trip(tmp_path, rng):
    tensors = {"a": rng.standard_normal((3, 4)), "scalar": np.array(2.5), "empty": np.zeros((0, 3)), "ünï": np.arange(5.0)}
    save(tmp_path / "x.gvae", tensors)
    back = load(tmp_path / "x.gvae")
    assert list(back) == list(tensors)
    for k in tensors:
        assert back[k].shape == tensors[k].shape
        assert np.array_equal(back[k], tensors[k])


def test_layout_is_little_endian_and_documented():
    data = dumps({"w": np.array([[1.0, 2.0]])})
    assert data[:4] == MAGIC
    assert struct.unpack_from("<II", data, 4) == (VERSION, 1)
    assert struct.unpack_from("<I", data, 12) == (1,)
    assert data[16:17] == b"w"
    assert struct.unpack_from("<I", data, 17) == (2,)
    assert struct.unpack_from("<2Q", data, 21) == (1, 2)
    assert struct.unpack_from("<2d", data, 37) == (1.0, 2.0)
    assert len(data) == 53


def test_rejects_bad_input():
    good = dumps({"w": np.ones(3)})
    with pytest.raises(CheckpointError):
        loads(b"XXXX" + good[4:])
    with pytest.raises(CheckpointError):
        loads(good[:4] + struct.pack("<I", VERSION + 1) + good[8:])
    with pytest.raises(CheckpointError):
        loads(good[:-1])
    with pytest.raises(CheckpointError):
        loads(good + b"\0")
    with pytest.raises(CheckpointError):
        loads(good[:6])


def test_resnet_round_trip(tmp_path):
    m = build_resnet(L=2, C=4, T=10, seed=3)
    save(tmp_path / "r.gvae", m.to_tensors())
    back = ResNetTW.from_tensors(load(tmp_path / "r.gvae"))
    assert (back.L, back.C, back.T, back.kernel) == (2, 4, 10, 5)
    for k, v in m.params.items():
        assert np.array_equal(back.params[k], v)
    with pytest.raises(ValueError):
        gvae.GVaeModel.from_tensors(m.to_tensors())


def test_gvae_round_trip(tmp_path, rng):
    m = gvae.build(T=12, l=4, hidden=(8,), kappa=20.0, seed=1)
    m.reference = rng.standard_normal((12, 3))
    m.latents = rng.standard_normal((5, 4))
    m.length_scale = 3.5
    save(tmp_path / "g.gvae", m.to_tensors())
    back = gvae.GVaeModel.from_tensors(load(tmp_path / "g.gvae"))
    assert (back.T, back.l, back.hidden, back.kappa, back.length_scale) == (12, 4, [8], 20.0, 3.5)
    assert np.array_equal(back.reference, m.reference)
    assert np.array_equal(back.latents, m.latents)
    q = rng.standard_normal((12, 3))
    assert np.array_equal(gvae.encode(back, q), gvae.encode(m, q))
    with pytest.raises(ValueError):
        ResNetTW.from_tensors(m.to_tensors())
