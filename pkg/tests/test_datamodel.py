"""Tests for dataset synthesis, similarity, and the binary dataset format."""

import numpy as np
import pytest

from xmhash.datamodel import (
    Dataset,
    build_similarity,
    load_dataset,
    save_dataset,
    synth_dataset,
)
from xmhash.errors import ContractError, FormatError, ShapeError


def similarity_oracle(a, b):
    """Scalar double loop: 1 iff the label rows share an active class."""
    out = np.zeros((a.shape[0], b.shape[0]), dtype=np.uint8)
    for i in range(a.shape[0]):
        for j in range(b.shape[0]):
            shared = 0
            for k in range(a.shape[1]):
                if a[i, k] == 1 and b[j, k] == 1:
                    shared += 1
            out[i, j] = 1 if shared > 0 else 0
    return out


class TestBuildSimilarity:
    def test_identical_single_label_rows_are_similar(self):
        a = np.array([[0, 1, 0]], dtype=np.uint8)
        assert build_similarity(a, a)[0, 0] == 1

    def test_disjoint_rows_are_dissimilar(self):
        a = np.array([[1, 0, 0]], dtype=np.uint8)
        b = np.array([[0, 1, 1]], dtype=np.uint8)
        assert build_similarity(a, b)[0, 0] == 0

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            m, mp, c = rng.integers(1, 8, size=3)
            a = (rng.random((m, c)) < 0.4).astype(np.uint8)
            b = (rng.random((mp, c)) < 0.4).astype(np.uint8)
            np.testing.assert_array_equal(build_similarity(a, b), similarity_oracle(a, b))

    def test_self_similarity_is_symmetric_with_unit_diagonal(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            labels = (rng.random((9, 5)) < 0.35).astype(np.uint8)
            labels[labels.sum(axis=1) == 0, 0] = 1
            s = build_similarity(labels, labels)
            np.testing.assert_array_equal(s, s.T)
            np.testing.assert_array_equal(np.diag(s), np.ones(9, dtype=np.uint8))

    def test_width_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            build_similarity(np.ones((2, 3), dtype=np.uint8), np.ones((2, 4), dtype=np.uint8))

    def test_non_binary_labels_rejected(self):
        with pytest.raises(ContractError):
            build_similarity(np.full((2, 3), 2, dtype=np.uint8), np.ones((2, 3), dtype=np.uint8))


class TestSynthDataset:
    def test_same_seed_is_bitwise_identical(self):
        a = synth_dataset(n=40, c=4, d_v=16, d_t=24, noise=0.1, seed=5)
        b = synth_dataset(n=40, c=4, d_v=16, d_t=24, noise=0.1, seed=5)
        assert a.images.tobytes() == b.images.tobytes()
        assert a.texts.tobytes() == b.texts.tobytes()
        assert a.labels.tobytes() == b.labels.tobytes()

    def test_different_seeds_differ(self):
        a = synth_dataset(n=40, c=4, d_v=16, d_t=24, noise=0.1, seed=5)
        b = synth_dataset(n=40, c=4, d_v=16, d_t=24, noise=0.1, seed=6)
        assert a.images.tobytes() != b.images.tobytes()

    def test_shapes_and_label_validity(self):
        ds = synth_dataset(n=30, c=5, d_v=8, d_t=12, noise=0.2, seed=1)
        assert (ds.n, ds.d_v, ds.d_t, ds.c) == (30, 8, 12, 5)
        counts = ds.labels.sum(axis=1)
        assert counts.min() >= 1 and counts.max() <= 3
        assert np.all(ds.texts >= 0.0)

    def test_zero_noise_makes_features_pure_prototype_sums(self):
        ds = synth_dataset(n=60, c=3, d_v=10, d_t=15, noise=0.0, seed=9)
        seen = {}
        for i in range(ds.n):
            key = ds.labels[i].tobytes()
            if key in seen:
                j = seen[key]
                np.testing.assert_array_equal(ds.images[i], ds.images[j])
                np.testing.assert_array_equal(ds.texts[i], ds.texts[j])
            else:
                seen[key] = i

    def test_zero_noise_single_label_cross_class_dissimilar(self):
        ds = synth_dataset(n=80, c=4, d_v=8, d_t=12, noise=0.0, seed=3)
        s = build_similarity(ds.labels, ds.labels)
        singles = np.flatnonzero(ds.labels.sum(axis=1) == 1)
        for i in singles[:10]:
            for j in singles[:10]:
                same_class = bool((ds.labels[i] & ds.labels[j]).any())
                assert s[i, j] == (1 if same_class else 0)

    def test_parameter_validation(self):
        with pytest.raises(ContractError):
            synth_dataset(n=1, c=4, d_v=8, d_t=8, noise=0.1, seed=0)
        with pytest.raises(ContractError):
            synth_dataset(n=10, c=1, d_v=8, d_t=8, noise=0.1, seed=0)
        with pytest.raises(ContractError):
            synth_dataset(n=10, c=4, d_v=8, d_t=8, noise=-0.5, seed=0)


class TestDatasetValidation:
    def _valid_parts(self):
        rng = np.random.default_rng(0)
        images = rng.normal(size=(4, 3))
        texts = np.abs(rng.normal(size=(4, 5)))
        labels = np.eye(4, 2, dtype=np.uint8)
        labels[labels.sum(axis=1) == 0, 0] = 1
        return images, texts, labels

    def test_all_zero_label_row_rejected(self):
        images, texts, labels = self._valid_parts()
        labels[2] = 0
        with pytest.raises(ContractError):
            Dataset(images, texts, labels)

    def test_negative_text_rejected(self):
        images, texts, labels = self._valid_parts()
        texts[0, 0] = -0.1
        with pytest.raises(ContractError):
            Dataset(images, texts, labels)

    def test_non_finite_image_rejected(self):
        images, texts, labels = self._valid_parts()
        images[1, 1] = np.nan
        with pytest.raises(ContractError):
            Dataset(images, texts, labels)

    def test_row_count_mismatch_rejected(self):
        images, texts, labels = self._valid_parts()
        with pytest.raises(ShapeError):
            Dataset(images[:3], texts, labels)

    def test_single_instance_rejected(self):
        images, texts, labels = self._valid_parts()
        with pytest.raises(ContractError):
            Dataset(images[:1], texts[:1], labels[:1])

    def test_instance_accessor(self):
        images, texts, labels = self._valid_parts()
        ds = Dataset(images, texts, labels)
        inst = ds.instance(2)
        np.testing.assert_array_equal(inst.image_feature, ds.images[2])
        np.testing.assert_array_equal(inst.text_feature, ds.texts[2])
        np.testing.assert_array_equal(inst.labels, ds.labels[2])


class TestDatasetFile:
    def test_roundtrip_is_bitwise(self, tmp_path):
        ds = synth_dataset(n=25, c=4, d_v=6, d_t=9, noise=0.3, seed=21)
        path = tmp_path / "data.xmhd"
        save_dataset(ds, path)
        back = load_dataset(path)
        assert back.images.tobytes() == ds.images.tobytes()
        assert back.texts.tobytes() == ds.texts.tobytes()
        assert back.labels.tobytes() == ds.labels.tobytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "data.xmhd"
        ds = synth_dataset(n=4, c=2, d_v=3, d_t=3, noise=0.0, seed=0)
        save_dataset(ds, path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"NOPE"
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="magic"):
            load_dataset(path)

    def test_unsupported_version(self, tmp_path):
        path = tmp_path / "data.xmhd"
        ds = synth_dataset(n=4, c=2, d_v=3, d_t=3, noise=0.0, seed=0)
        save_dataset(ds, path)
        raw = bytearray(path.read_bytes())
        raw[4] = 99
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="version"):
            load_dataset(path)

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "data.xmhd"
        ds = synth_dataset(n=6, c=2, d_v=4, d_t=4, noise=0.0, seed=0)
        save_dataset(ds, path)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 5])
        with pytest.raises(FormatError, match="truncated"):
            load_dataset(path)

    def test_trailing_bytes(self, tmp_path):
        path = tmp_path / "data.xmhd"
        ds = synth_dataset(n=4, c=2, d_v=3, d_t=3, noise=0.0, seed=0)
        save_dataset(ds, path)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(FormatError, match="trailing"):
            load_dataset(path)

    def test_invalid_label_byte(self, tmp_path):
        path = tmp_path / "data.xmhd"
        ds = synth_dataset(n=4, c=2, d_v=3, d_t=3, noise=0.0, seed=0)
        save_dataset(ds, path)
        raw = bytearray(path.read_bytes())
        raw[-1] = 7
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="content invalid"):
            load_dataset(path)
