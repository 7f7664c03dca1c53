import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rwmcgan import mnist
from rwmcgan.errors import DomainError, FormatError, LengthError


def _image_bytes(pixels):
    n, r, c = pixels.shape
    return struct.pack(">IIII", 0x803, n, r, c) + bytes(pixels.ravel().tolist())


def _label_bytes(labels):
    return struct.pack(">II", 0x801, len(labels)) + bytes(labels)


@pytest.fixture
def fixture_dir(tmp_path):
    rng = np.random.default_rng(0)
    pixels = rng.integers(0, 256, size=(2, 28, 28), dtype=np.uint8)
    (tmp_path / "train-images-idx3-ubyte").write_bytes(_image_bytes(pixels))
    (tmp_path / "train-labels-idx1-ubyte").write_bytes(_label_bytes([3, 8]))
    return tmp_path, pixels


# ------------------------------------------------------------------ parsing

def test_parse_image_fixture(fixture_dir):
    path, pixels = fixture_dir
    got = mnist.load_idx_images(path / "train-images-idx3-ubyte")
    assert got.shape == (2, 28, 28)
    assert np.array_equal(got, pixels)


def test_parse_label_fixture():
    assert mnist.parse_idx_labels(_label_bytes([0, 1, 2])).tolist() == [0, 1, 2]


def test_round_trip_is_bitwise(fixture_dir):
    path, _ = fixture_dir
    for name, parse, encode in (("train-images-idx3-ubyte", mnist.parse_idx_images, mnist.encode_idx_images),
                                ("train-labels-idx1-ubyte", mnist.parse_idx_labels, mnist.encode_idx_labels)):
        raw = (path / name).read_bytes()
        assert encode(parse(raw)) == raw


def test_wrong_magic_names_observed_value():
    buf = struct.pack(">IIII", 0x801, 1, 1, 1) + b"\x00"
    with pytest.raises(FormatError, match="0x00000801"):
        mnist.parse_idx_images(buf)


def test_truncated_payload():
    buf = _image_bytes(np.zeros((3, 28, 28), np.uint8))[:-1]
    with pytest.raises(LengthError):
        mnist.parse_idx_images(buf)


def test_trailing_bytes_rejected():
    with pytest.raises(LengthError):
        mnist.parse_idx_labels(_label_bytes([1, 2]) + b"\x00")


def test_truncated_header():
    with pytest.raises(LengthError):
        mnist.parse_idx_images(struct.pack(">II", 0x803, 1))


def test_label_out_of_range():
    with pytest.raises(DomainError):
        mnist.parse_idx_labels(_label_bytes([1, 10]))


def test_missing_file_is_format_error(tmp_path):
    with pytest.raises(FormatError):
        mnist.load_idx_labels(tmp_path / "nope")


def test_mismatched_split_counts(fixture_dir):
    path, _ = fixture_dir
    (path / "train-labels-idx1-ubyte").write_bytes(_label_bytes([3]))
    with pytest.raises(FormatError):
        mnist.load_split(path, "train")


def test_load_split_fixture_provenance(fixture_dir):
    path, pixels = fixture_dir
    ds = mnist.load_split(path, "train")
    assert ds.images.shape == (2, 1, 28, 28) and ds.images.dtype == np.float32
    assert ds.labels.tolist() == [3, 8]
    assert "train-images-idx3-ubyte" in ds.provenance


# ------------------------------------------------------------ normalization

@pytest.mark.parametrize("v,expected", [(0, -1.0), (255, 1.0), (128, 0.00392157)])
def test_normalize_points(v, expected):
    assert mnist.normalize(np.array([v], np.uint8))[0] == pytest.approx(expected, abs=1e-6)


def test_denormalize_inverts_every_byte():
    v = np.arange(256, dtype=np.uint8)
    assert np.abs(mnist.denormalize(mnist.normalize(v)) - v).max() <= 1e-4


def test_normalize_range():
    out = mnist.normalize(np.arange(256, dtype=np.uint8))
    assert out.min() == -1.0 and out.max() == 1.0


# --------------------------------------------------------- subset / batches

def _toy_set(counts):
    labels = np.concatenate([np.full(k, c) for c, k in enumerate(counts)]).astype(np.int64)
    images = np.zeros((len(labels), 1, 28, 28), np.float32)
    images[:, 0, 0, 0] = np.arange(len(labels))
    return mnist.LabeledImageSet(images, labels)


def test_subset_histogram_is_uniform():
    ds = _toy_set([7, 9, 5, 6, 8, 5, 9, 12, 5, 6])
    sub = mnist.subset_per_class(ds, 5, seed=3)
    assert np.bincount(sub.labels, minlength=10).tolist() == [5] * 10


def test_subset_is_deterministic_and_seed_dependent():
    ds = _toy_set([30] * 10)
    a = mnist.subset_per_class(ds, 4, seed=1).images[:, 0, 0, 0]
    b = mnist.subset_per_class(ds, 4, seed=1).images[:, 0, 0, 0]
    c = mnist.subset_per_class(ds, 4, seed=2).images[:, 0, 0, 0]
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_subset_insufficient_class_is_named():
    ds = _toy_set([5, 5, 5, 2, 5, 5, 5, 5, 5, 5])
    with pytest.raises(DomainError, match="class 3"):
        mnist.subset_per_class(ds, 3, seed=0)


def test_batches_cover_epoch_once():
    ds = _toy_set([10] * 10)
    batches = mnist.make_batches(ds, 32, seed=0, epoch=0)
    assert [len(b) for b in batches] == [32, 32, 32, 4]
    assert sorted(np.concatenate(batches).tolist()) == list(range(100))


def test_batches_differ_between_epochs():
    ds = _toy_set([10] * 10)
    a = np.concatenate(mnist.make_batches(ds, 10, 0, 0))
    b = np.concatenate(mnist.make_batches(ds, 10, 0, 1))
    assert not np.array_equal(a, b)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 5), seed=st.integers(0, 2**32))
def test_subset_members_belong_to_their_class(n, seed):
    ds = _toy_set([6] * 10)
    sub = mnist.subset_per_class(ds, n, seed)
    src = sub.images[:, 0, 0, 0].astype(int)
    assert np.array_equal(ds.labels[src], sub.labels)


# ------------------------------------------------------------ official data

def test_official_files(data_dir):
    train = mnist.load_split(data_dir, "train")
    test = mnist.load_split(data_dir, "test")
    assert train.images.shape == (60000, 1, 28, 28)
    assert test.images.shape == (10000, 1, 28, 28)
    assert train.labels[:5].tolist() == [5, 0, 4, 1, 9]
    assert np.bincount(test.labels).sum() == 10000


def test_official_label_file_round_trips(data_dir):
    raw = (data_dir / "t10k-labels-idx1-ubyte").read_bytes()
    assert mnist.encode_idx_labels(mnist.parse_idx_labels(raw)) == raw
