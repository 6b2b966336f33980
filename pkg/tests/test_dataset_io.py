import numpy as np
import pytest

from boaug.dataset_io import (CIFAR_RECORD, LabeledDataset, load_cifar10_binary, load_dataset, load_image_dir,
                              make_reduced_split, read_png, save_cifar10_binary, synthetic_shapes, write_png)
from boaug.errors import DatasetFormatError, DomainError


def _cifar_bytes(labels, rng):
    recs = []
    for lab in labels:
        recs.append(bytes([lab]) + rng.integers(0, 256, 3072, dtype=np.uint8).tobytes())
    return b"".join(recs)


def test_cifar_binary_layout(tmp_path, rng):
    raw = _cifar_bytes([3, 7], rng)
    path = tmp_path / "data_batch_1.bin"
    path.write_bytes(raw)
    ds = load_cifar10_binary(path)
    assert ds.images.shape == (2, 32, 32, 3) and list(ds.labels) == [3, 7]
    # record layout: label byte, then 1024 R, 1024 G, 1024 B in row-major order
    rec = np.frombuffer(raw[CIFAR_RECORD:2 * CIFAR_RECORD], np.uint8)
    assert ds.images[1, 0, 0, 0] == rec[1]
    assert ds.images[1, 0, 0, 1] == rec[1 + 1024]
    assert ds.images[1, 0, 0, 2] == rec[1 + 2048]
    assert ds.images[1, 2, 5, 1] == rec[1 + 1024 + 2 * 32 + 5]


def test_cifar_round_trip(tmp_path, rng):
    ds = LabeledDataset(rng.integers(0, 256, (5, 32, 32, 3), dtype=np.uint8), [0, 1, 9, 4, 4], 10)
    save_cifar10_binary(tmp_path / "x.bin", ds)
    back = load_cifar10_binary(tmp_path / "x.bin")
    np.testing.assert_array_equal(back.images, ds.images)
    np.testing.assert_array_equal(back.labels, ds.labels)


def test_cifar_truncated_reports_offset(tmp_path, rng):
    path = tmp_path / "t.bin"
    path.write_bytes(_cifar_bytes([1, 2], rng)[:-10])
    with pytest.raises(DatasetFormatError, match=f"byte offset {CIFAR_RECORD}"):
        load_cifar10_binary(path)


def test_cifar_bad_label_reports_record(tmp_path, rng):
    path = tmp_path / "b.bin"
    path.write_bytes(_cifar_bytes([1, 12], rng))
    with pytest.raises(DatasetFormatError, match="record 1"):
        load_cifar10_binary(path)


def test_load_dataset_directory_of_batches(tmp_path, rng):
    (tmp_path / "data_batch_1.bin").write_bytes(_cifar_bytes([0, 1], rng))
    (tmp_path / "data_batch_2.bin").write_bytes(_cifar_bytes([2], rng))
    ds = load_dataset(tmp_path, "cifar10")
    assert list(ds.labels) == [0, 1, 2]


def test_image_dir(tmp_path, rng):
    for cls, n in (("cat", 2), ("ant", 1)):
        (tmp_path / cls).mkdir()
        for i in range(n):
            write_png(tmp_path / cls / f"{i}.png", rng.integers(0, 256, (4, 5, 3), dtype=np.uint8))
    ds = load_image_dir(tmp_path)
    assert ds.class_names == ("ant", "cat")
    assert list(ds.labels) == [0, 1, 1]
    assert ds.images.shape == (3, 4, 5, 3)
    assert load_dataset(tmp_path).class_count == 2


def test_image_dir_errors(tmp_path):
    with pytest.raises(DatasetFormatError):
        load_image_dir(tmp_path / "missing")
    (tmp_path / "a").mkdir()
    with pytest.raises(DatasetFormatError):
        load_image_dir(tmp_path)
    (tmp_path / "a" / "x.png").write_bytes(b"not a png")
    with pytest.raises(DatasetFormatError, match="cannot decode"):
        load_image_dir(tmp_path)


def test_png_round_trip(tmp_path, random_image):
    write_png(tmp_path / "i.png", random_image)
    np.testing.assert_array_equal(read_png(tmp_path / "i.png"), random_image)


def test_labeled_dataset_validation():
    with pytest.raises(DomainError):
        LabeledDataset(np.zeros((2, 1, 1, 3), np.uint8), [0], 2)
    with pytest.raises(DomainError):
        LabeledDataset(np.zeros((1, 1, 1, 3), np.uint8), [2], 2)


@pytest.mark.parametrize("stratify", [False, True])
def test_reduced_split_disjoint_and_seeded(stratify):
    ds = synthetic_shapes(300, seed=1, size=8)
    tr, va = make_reduced_split(ds, 100, 50, seed=4, stratify=stratify)
    assert len(tr) == 100 and len(va) == 50
    tr2, _ = make_reduced_split(ds, 100, 50, seed=4, stratify=stratify)
    np.testing.assert_array_equal(tr.images, tr2.images)
    keys = lambda d: {im.tobytes() for im in d.images}
    assert not keys(tr) & keys(va)


def test_stratified_split_preserves_proportions():
    labels = np.array([0] * 60 + [1] * 30 + [2] * 10)
    ds = LabeledDataset(np.zeros((100, 1, 1, 3), np.uint8), labels, 3)
    tr, _ = make_reduced_split(ds, 20, 10, seed=0, stratify=True)
    assert list(np.bincount(tr.labels)) == [12, 6, 2]


def test_reduced_split_too_large():
    with pytest.raises(DomainError):
        make_reduced_split(synthetic_shapes(10, size=8), 9, 2)


def test_synthetic_shapes_deterministic():
    a, b = synthetic_shapes(20, seed=3), synthetic_shapes(20, seed=3)
    np.testing.assert_array_equal(a.images, b.images)
    assert a.images.shape == (20, 32, 32, 3) and a.class_count == 4
    assert not np.array_equal(a.images, synthetic_shapes(20, seed=4).images)
