import numpy as np
import pytest

from navslip.io import SnapshotError, config_hash, load_checkpoint, read_snapshot, save_checkpoint, write_snapshot


def test_snapshot_roundtrip(tmp_path, rng):
    a = rng.standard_normal((8, 9))
    write_snapshot(tmp_path / "a.slpf", "theta", a)
    name, b = read_snapshot(tmp_path / "a.slpf")
    assert name == "theta" and b.shape == a.shape and np.array_equal(a, b)
    raw = (tmp_path / "a.slpf").read_bytes()
    assert raw[:4] == b"SLPF"


def test_snapshot_corruption(tmp_path):
    p = tmp_path / "bad.slpf"
    p.write_bytes(b"NOPE" + b"\0" * 20)
    with pytest.raises(SnapshotError):
        read_snapshot(p)
    write_snapshot(p, "x", np.zeros((8, 9)))
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(SnapshotError):
        read_snapshot(p)


def test_checkpoint_roundtrip(tmp_path, rng):
    fields = {"omega": rng.standard_normal((8, 9)), "theta": rng.standard_normal((8, 9))}
    save_checkpoint(tmp_path / "ck", fields, {"t": 1.5, "step": 3})
    back, meta = load_checkpoint(tmp_path / "ck")
    assert meta["t"] == 1.5 and meta["step"] == 3
    for k in fields:
        assert np.array_equal(fields[k], back[k])


def test_config_hash_order_independent():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
