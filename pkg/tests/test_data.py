import numpy as np
import pytest

from rfadv.data import (
    Dataset,
    DatasetFileError,
    check_loopback,
    generate_dataset,
    load_dataset,
    save_dataset,
)
from rfadv.modem import SCHEMES, ModScheme


@pytest.fixture(scope="module")
def small():
    return generate_dataset(frames_per_class=3, frame_len=256, seed=7)


def test_layout(small):
    assert len(small) == 3 * len(SCHEMES)
    assert small.frames.shape == (48, 256)
    assert small.frames.dtype == np.complex64
    np.testing.assert_array_equal(np.bincount(small.labels), 3)
    np.testing.assert_allclose(np.mean(np.abs(small.frames) ** 2, axis=1), 1.0, rtol=1e-5)


def test_regeneration_is_identical(small):
    again = generate_dataset(frames_per_class=3, frame_len=256, seed=7)
    np.testing.assert_array_equal(again.frames, small.frames)
    assert all(np.array_equal(a, b) for a, b in zip(again.bits, small.bits))


def test_offset_split_continues_the_stream():
    whole = generate_dataset(SCHEMES[:2], 5, frame_len=128, seed=3)
    tail = generate_dataset(SCHEMES[:2], 2, frame_len=128, seed=3, first_frame=3)
    np.testing.assert_array_equal(tail.frames, whole.frames[np.r_[3, 4, 8, 9]])


def test_seeds_differ():
    a = generate_dataset(SCHEMES[:1], 2, frame_len=128, seed=1)
    b = generate_dataset(SCHEMES[:1], 2, frame_len=128, seed=2)
    assert not np.array_equal(a.frames, b.frames)


def test_clean_loopback(small):
    assert check_loopback(small) == 0


def test_per_class_and_subset(small):
    sub = small.per_class(2)
    assert len(sub) == 32
    assert np.all(small.of_class(5).labels == 5)
    with pytest.raises(ValueError):
        Dataset(small.frames[:2], [0], small.bits[:2], small.schemes)
    with pytest.raises(ValueError):
        Dataset(small.frames[:1], [99], small.bits[:1], small.schemes)


def test_file_round_trip_is_byte_exact(small, tmp_path):
    path = tmp_path / "d.rfadvd"
    save_dataset(small, path)
    loaded = load_dataset(path)
    np.testing.assert_array_equal(loaded.frames, small.frames)
    np.testing.assert_array_equal(loaded.labels, small.labels)
    assert loaded.schemes == small.schemes
    assert loaded.shape == small.shape
    assert all(np.array_equal(a, b) for a, b in zip(loaded.bits, small.bits))
    save_dataset(loaded, tmp_path / "again")
    assert (tmp_path / "again").read_bytes() == path.read_bytes()


def test_odd_payload_length_survives_packing(tmp_path):
    ds = generate_dataset([ModScheme.from_name("8psk")], 2, frame_len=12, seed=0)
    assert ds.bits[0].size == 9  # three symbols, not a whole byte
    save_dataset(ds, tmp_path / "d")
    assert np.array_equal(load_dataset(tmp_path / "d").bits[1], ds.bits[1])


def test_corrupt_files_fail_cleanly(small, tmp_path):
    path = tmp_path / "d"
    save_dataset(small, path)
    raw = path.read_bytes()
    (tmp_path / "cut").write_bytes(raw[:-5])
    with pytest.raises(DatasetFileError, match="truncated"):
        load_dataset(tmp_path / "cut")
    (tmp_path / "magic").write_bytes(b"NOTDATA" + raw[7:])
    with pytest.raises(DatasetFileError, match="magic"):
        load_dataset(tmp_path / "magic")
    (tmp_path / "extra").write_bytes(raw + b"\0")
    with pytest.raises(DatasetFileError, match="trailing"):
        load_dataset(tmp_path / "extra")
