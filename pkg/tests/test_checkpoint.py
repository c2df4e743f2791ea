import numpy as np
import pytest

from cascadeid import checkpoint


def test_round_trip_preserves_arrays_and_meta(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {"se.block01.conv.kernel": rng.normal(size=(5, 5, 1, 4)).astype(np.float32),
              "sid.fc.b": np.zeros((1, 8), np.float32)}
    meta = {"variant": "SE+SID", "seed": 3}
    path = tmp_path / "m.ckpt"
    checkpoint.save(path, arrays, meta)
    got, got_meta = checkpoint.load(path)
    assert got_meta == meta
    assert sorted(got) == sorted(arrays)
    for k in arrays:
        np.testing.assert_array_equal(got[k], arrays[k])


def test_serialisation_is_byte_stable_regardless_of_insertion_order():
    a = {"x": np.ones(3), "y": np.arange(4.0)}
    b = {"y": np.arange(4.0), "x": np.ones(3)}
    assert checkpoint.dumps(a, {"k": 1}) == checkpoint.dumps(b, {"k": 1})


def test_corrupt_blobs_are_rejected():
    blob = checkpoint.dumps({"x": np.ones(10)})
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(b"NOTACKPT" + blob[8:])
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(blob[:-4])


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        checkpoint.load(tmp_path / "absent.ckpt")
