import struct

import numpy as np
import pytest

from aqpl.dataset import (
    CheckpointError,
    Dataset,
    FormatError,
    blob_boundary,
    blob_labeler,
    gen_blobs,
    init_triplets,
    load_idx_images,
    load_state,
    save_state,
)
from aqpl.model import LinearBinary
from aqpl.numerics import DomainError, Rng


def make_idx_fixture(tmp_path, images, labels, image_magic=0x803, label_magic=0x801,
                     label_count=None, truncate=0):
    """Hand-built IDX pair; images is a uint8 array (n, rows, cols)."""
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    img_path = tmp_path / "images.idx"
    lab_path = tmp_path / "labels.idx"
    payload = struct.pack(">IIII", image_magic, n, rows, cols) + images.tobytes()
    if truncate:
        payload = payload[:-truncate]
    img_path.write_bytes(payload)
    lab_path.write_bytes(
        struct.pack(">II", label_magic, label_count if label_count is not None else n)
        + bytes(labels)
    )
    return str(img_path), str(lab_path)


class TestGenBlobs:
    def test_small_symmetric_profile_is_mirror_symmetric(self):
        data = gen_blobs(Rng(3), 4, 2, 2, margin_range=(0.1, 1.0))
        neg = data.x[data.y == 0]
        pos = data.x[data.y == 1]
        mirrored = pos.copy()
        mirrored[:, 0] *= -1.0
        assert np.array_equal(np.sort(neg[:, 0]), np.sort(mirrored[:, 0]))
        assert np.array_equal(neg[:, 1:], pos[:, 1:])

    def test_generating_hyperplane_separates_fresh_draw(self):
        w, b = blob_boundary(2)
        clf = LinearBinary(w, b)
        fresh = gen_blobs(Rng(99).substream("fresh"), 1000, 2, 2)
        acc = float(np.mean(clf.predict(fresh.x) == fresh.y))
        assert acc >= 0.99

    def test_four_classes_balanced(self):
        data = gen_blobs(Rng(1), 1000, 4, 2)
        assert np.bincount(data.y).tolist() == [250, 250, 250, 250]

    def test_margins_span_profile(self):
        data = gen_blobs(Rng(0), 200, 2, 2, margin_range=(0.2, 1.5))
        margins = np.abs(data.x[:, 0])
        assert abs(margins.min() - 0.2) < 1e-12
        assert abs(margins.max() - 1.5) < 1e-12

    def test_per_class_margin_profile(self):
        data = gen_blobs(Rng(0), 100, 2, 2, margin_range=((0.1, 0.5), (1.0, 2.0)))
        m0 = np.abs(data.x[data.y == 0, 0])
        m1 = np.abs(data.x[data.y == 1, 0])
        assert m0.max() <= 0.5 + 1e-12
        assert m1.min() >= 1.0 - 1e-12

    def test_stagger_offsets_second_class(self):
        sym = gen_blobs(Rng(2), 50, 2, 2, stagger=0.0)
        stag = gen_blobs(Rng(2), 50, 2, 2, stagger=1.5)
        assert np.array_equal(sym.x[sym.y == 0], stag.x[stag.y == 0])
        assert np.allclose(sym.x[sym.y == 1, 1] + 1.5, stag.x[stag.y == 1, 1])

    def test_labeler_matches_construction(self):
        for k in (2, 3, 5):
            data = gen_blobs(Rng(4), 300, k, 3)
            label = blob_labeler(k, 3)
            assert np.array_equal(label(data.x), data.y)

    def test_rejects_bad_shapes(self):
        with pytest.raises(DomainError):
            gen_blobs(Rng(0), 1, 2, 2)
        with pytest.raises(DomainError):
            gen_blobs(Rng(0), 10, 2, 1)
        with pytest.raises(DomainError):
            gen_blobs(Rng(0), 10, 2, 2, margin_range=(0.0, 1.0))


class TestLoadIdx:
    def test_canonical_four_image_fixture(self, tmp_path):
        rng = np.random.default_rng(0)
        images = rng.integers(0, 256, size=(4, 28, 28), dtype=np.uint8)
        img, lab = make_idx_fixture(tmp_path, images, [3, 1, 4, 1])
        data = load_idx_images(img, lab)
        assert (data.n, data.d, data.n_classes) == (4, 784, 10)
        assert data.image_shape == (28, 28)
        assert np.array_equal(data.y, [3, 1, 4, 1])
        assert np.allclose(data.x[0], images[0].reshape(-1) / 255.0)
        assert data.x.min() >= 0.0 and data.x.max() <= 1.0

    def test_limit_zero_rejected(self, tmp_path):
        img, lab = make_idx_fixture(tmp_path, np.zeros((2, 2, 2), np.uint8), [0, 1])
        with pytest.raises(FormatError, match="empty"):
            load_idx_images(img, lab, limit=0)

    def test_count_mismatch_names_file(self, tmp_path):
        img, lab = make_idx_fixture(
            tmp_path, np.zeros((3, 2, 2), np.uint8), [0, 1, 2], label_count=2
        )
        with pytest.raises(FormatError, match="labels.idx"):
            load_idx_images(img, lab)

    def test_bad_magic(self, tmp_path):
        img, lab = make_idx_fixture(
            tmp_path, np.zeros((1, 2, 2), np.uint8), [0], image_magic=0x9999
        )
        with pytest.raises(FormatError, match="magic"):
            load_idx_images(img, lab)

    def test_truncated_payload(self, tmp_path):
        img, lab = make_idx_fixture(tmp_path, np.zeros((2, 4, 4), np.uint8), [0, 1], truncate=3)
        with pytest.raises(FormatError, match="truncated"):
            load_idx_images(img, lab)

    def test_limit_keeps_prefix(self, tmp_path):
        images = np.arange(4 * 4 * 4, dtype=np.uint8).reshape(4, 4, 4)
        img, lab = make_idx_fixture(tmp_path, images, [0, 1, 2, 3])
        data = load_idx_images(img, lab, limit=2)
        assert data.n == 2
        assert np.array_equal(data.y, [0, 1])


class TestTriplets:
    def test_init_assigns_uniform_level(self):
        data = gen_blobs(Rng(0), 6, 2, 2)
        t = init_triplets(data, 0.23)
        assert all(tr.sigma == 0.23 for tr in t.triplets)
        assert all(not tr.annotated for tr in t.triplets)
        assert t.eligible_indices() == list(range(6))

    def test_zero_level_allowed(self):
        data = gen_blobs(Rng(0), 4, 2, 2)
        t = init_triplets(data, 0.0)
        assert t.mean_sigma() == 0.0

    def test_apply_annotation(self):
        data = gen_blobs(Rng(0), 4, 2, 2)
        t = init_triplets(data, 0.23)
        t.apply_annotation(2, 0.4, 1)
        assert t[2].sigma == 0.4
        assert t[2].annotated
        assert t[2].sigma_history == [(1, 0.4)]
        assert t.eligible_indices() == [0, 1, 3]
        with pytest.raises(DomainError):
            t.apply_annotation(2, 0.1, 0)  # earlier round than history


class TestCheckpoint:
    def _roundtrip(self, tmp_path, include_features=True):
        data = gen_blobs(Rng(0), 5, 2, 2)
        t = init_triplets(data, 0.23)
        t.apply_annotation(1, 0.07, 1)
        t.apply_annotation(3, 0.61, 2)
        weights = {"arch": "linear", "d": 2, "n_classes": 2, "hidden": 0,
                   "theta": [0.1, -0.25, 0.3333333333333333, 0.0, 1e-9, 7.0]}
        qlog = [{"round": 1, "strategy": "aqpl", "index": 1, "side": "excessive",
                 "entropy": 0.693, "sigma_before": 0.23, "sigma_after": 0.07, "note": ""}]
        path = tmp_path / "ckpt.json"
        save_state(str(path), t, weights, qlog, 2, include_features=include_features)
        return data, t, weights, qlog, path

    def test_roundtrip_identity(self, tmp_path):
        data, t, weights, qlog, path = self._roundtrip(tmp_path)
        state = load_state(str(path))
        assert state.round_index == 2
        assert state.weights == weights
        assert state.query_log == qlog
        assert np.array_equal(state.triplets.data.x, data.x)
        for orig, loaded in zip(t.triplets, state.triplets.triplets):
            assert loaded.sigma == orig.sigma
            assert loaded.annotated == orig.annotated
            assert loaded.sigma_history == orig.sigma_history

    def test_empty_log_roundtrip(self, tmp_path):
        data = gen_blobs(Rng(0), 3, 2, 2)
        t = init_triplets(data, 0.23)
        path = tmp_path / "c.json"
        save_state(str(path), t, {"theta": []}, [], 0)
        state = load_state(str(path))
        assert state.query_log == []
        assert state.round_index == 0

    def test_features_by_reference(self, tmp_path):
        data, t, weights, qlog, path = self._roundtrip(tmp_path, include_features=False)
        with pytest.raises(CheckpointError, match="reference"):
            load_state(str(path))
        state = load_state(str(path), features_from=data)
        assert np.array_equal(state.triplets.data.x, data.x)

    def test_truncated_file_reports_offset(self, tmp_path):
        data, t, weights, qlog, path = self._roundtrip(tmp_path)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) // 2])
        with pytest.raises(CheckpointError, match="byte"):
            load_state(str(path))

    def test_save_is_atomic(self, tmp_path):
        # a failed dump must not clobber an existing checkpoint
        data = gen_blobs(Rng(0), 3, 2, 2)
        t = init_triplets(data, 0.23)
        path = tmp_path / "c.json"
        save_state(str(path), t, {"theta": []}, [], 0)
        before = path.read_bytes()
        with pytest.raises(TypeError):
            save_state(str(path), t, {"theta": object()}, [], 1)
        assert path.read_bytes() == before

    def test_floats_roundtrip_bit_exactly(self, tmp_path):
        data = gen_blobs(Rng(0), 3, 2, 2)
        t = init_triplets(data, 0.1 + 0.2)  # 0.30000000000000004
        path = tmp_path / "c.json"
        save_state(str(path), t, {"theta": [1.0 / 3.0]}, [], 0)
        state = load_state(str(path))
        assert state.triplets[0].sigma == 0.1 + 0.2
        assert state.weights["theta"][0] == 1.0 / 3.0


class TestDatasetValidation:
    def test_rejects_mismatched_lengths(self):
        with pytest.raises(DomainError):
            Dataset(np.zeros((3, 2)), np.zeros(2, dtype=int), 2)

    def test_rejects_bad_labels(self):
        with pytest.raises(DomainError):
            Dataset(np.zeros((2, 2)), np.array([0, 5]), 2)

    def test_rejects_non_finite(self):
        x = np.zeros((2, 2))
        x[0, 0] = np.inf
        with pytest.raises(DomainError):
            Dataset(x, np.array([0, 1]), 2)
