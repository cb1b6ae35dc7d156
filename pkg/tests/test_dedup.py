"""Near-duplicate detection index and its binary sidecar format."""

import struct

import pytest

from docrefinery.dedup import (
    DEFAULT_THRESHOLD,
    DedupIndex,
    DuplicateEntryError,
    ProviderMismatchError,
    DedupError,
)
from docrefinery.embedding import DimensionMismatchError, EmbeddingVector, cosine_similarity


def unit(*values):
    return EmbeddingVector(list(values))


def vector_with_similarity(target: float, dim: int = 4) -> tuple[EmbeddingVector, EmbeddingVector]:
    """Two unit vectors whose cosine similarity is exactly ``target``."""
    a = [1.0] + [0.0] * (dim - 1)
    b = [target, (1.0 - target**2) ** 0.5] + [0.0] * (dim - 2)
    return unit(*a), unit(*b)


def make_index(threshold=DEFAULT_THRESHOLD, dim=4):
    return DedupIndex(provider_id="hashed-tf-4", dim=dim, threshold=threshold)


class TestDecisionRule:
    def test_empty_index_is_unique(self):
        decision = make_index().check(unit(1, 0, 0, 0))
        assert not decision.is_duplicate
        assert decision.duplicate_of is None

    def test_above_threshold_is_duplicate(self):
        a, b = vector_with_similarity(0.95)
        index = make_index()
        index.insert("doc-a", a)
        decision = index.check(b)
        assert decision.is_duplicate
        assert decision.duplicate_of == "doc-a"
        assert decision.similarity == pytest.approx(0.95)

    def test_below_threshold_is_unique(self):
        a, b = vector_with_similarity(0.91)
        index = make_index()
        index.insert("doc-a", a)
        assert not index.check(b).is_duplicate

    def test_exact_threshold_is_not_duplicate(self):
        # The rule is strictly greater-than; equality stays unique.
        a, b = vector_with_similarity(DEFAULT_THRESHOLD)
        assert cosine_similarity(a, b) == pytest.approx(DEFAULT_THRESHOLD)
        index = make_index()
        index.insert("doc-a", a)
        assert not index.check(b).is_duplicate

    def test_identical_vector_is_duplicate(self):
        vec = unit(0.5, 0.5, 0.5, 0.5)
        index = make_index()
        index.insert("doc-a", vec)
        decision = index.check(vec)
        assert decision.is_duplicate
        assert decision.similarity == pytest.approx(1.0)

    def test_reports_nearest_entry(self):
        anchor, query = vector_with_similarity(0.97)
        far = unit(0, 0, 1, 0)
        index = make_index()
        index.insert("far", far)
        index.insert("near", anchor)
        decision = index.check(query)
        assert decision.duplicate_of == "near"
        assert decision.similarity == pytest.approx(0.97)

    def test_tie_breaks_to_earliest_insertion(self):
        vec = unit(1, 0, 0, 0)
        index = make_index()
        index.insert("first", vec)
        index.insert("second", vec)
        assert index.check(vec).duplicate_of == "first"

    def test_threshold_monotonicity(self):
        # Raising the threshold can only flip duplicates to unique.
        a, b = vector_with_similarity(0.95)
        strict = make_index(threshold=0.99)
        loose = make_index(threshold=0.90)
        for index in (strict, loose):
            index.insert("doc-a", a)
        assert loose.check(b).is_duplicate
        assert not strict.check(b).is_duplicate

    def test_threshold_bounds(self):
        with pytest.raises(DedupError):
            make_index(threshold=0.0)
        with pytest.raises(DedupError):
            make_index(threshold=1.5)
        make_index(threshold=1.0)


class TestIndexBookkeeping:
    def test_duplicate_doc_id_rejected(self):
        index = make_index()
        index.insert("doc-a", unit(1, 0, 0, 0))
        with pytest.raises(DuplicateEntryError):
            index.insert("doc-a", unit(0, 1, 0, 0))

    def test_contains_and_len(self):
        index = make_index()
        index.insert("doc-a", unit(1, 0, 0, 0))
        assert "doc-a" in index and "doc-b" not in index
        assert len(index) == 1

    def test_provider_mismatch_rejected(self):
        index = make_index()
        with pytest.raises(ProviderMismatchError):
            index.check(unit(1, 0, 0, 0), provider_id="other-model")
        with pytest.raises(ProviderMismatchError):
            index.insert("doc-a", unit(1, 0, 0, 0), provider_id="other-model")

    def test_dimension_mismatch_rejected(self):
        index = make_index()
        with pytest.raises(DimensionMismatchError):
            index.check(unit(1, 0, 0))

    def test_entries_in_insertion_order(self):
        index = make_index()
        index.insert("b", unit(1, 0, 0, 0))
        index.insert("a", unit(0, 1, 0, 0))
        assert [doc_id for doc_id, _ in index.entries()] == ["b", "a"]


class TestSidecarFormat:
    def test_round_trip(self, tmp_path):
        index = make_index()
        index.insert("doc-a", unit(1, 0, 0, 0))
        index.insert("doc-b", unit(0.5, 0.5, 0.5, 0.5))
        path = tmp_path / "dedup.vec"
        index.save(path)

        loaded = DedupIndex.load(path, provider_id="hashed-tf-4", dim=4)
        assert [doc_id for doc_id, _ in loaded.entries()] == ["doc-a", "doc-b"]
        for (_, original), (_, reloaded) in zip(index.entries(), loaded.entries()):
            assert original == reloaded

    def test_binary_layout_is_length_prefixed(self, tmp_path):
        # Each entry: u32 id length, id bytes, u32 dim, dim float64 values.
        index = make_index(dim=2)
        vec = unit(0.6, 0.8)
        index.insert("ab", vec)
        path = tmp_path / "dedup.vec"
        index.save(path)

        blob = path.read_bytes()
        id_len = struct.unpack_from("<I", blob, 0)[0]
        assert id_len == 2
        assert blob[4:6] == b"ab"
        dim = struct.unpack_from("<I", blob, 6)[0]
        assert dim == 2
        values = struct.unpack_from("<2d", blob, 10)
        assert values == pytest.approx((0.6, 0.8))
        assert len(blob) == 4 + 2 + 4 + 16

    def test_loaded_index_enforces_declared_provider(self, tmp_path):
        # The sidecar carries no provider tag; the loader's declaration
        # becomes the index identity and later calls must match it.
        index = make_index()
        index.insert("doc-a", unit(1, 0, 0, 0))
        path = tmp_path / "dedup.vec"
        index.save(path)
        loaded = DedupIndex.load(path, provider_id="hashed-tf-4", dim=4)
        with pytest.raises(ProviderMismatchError):
            loaded.check(unit(1, 0, 0, 0), provider_id="other-model")

    def test_load_checks_dim(self, tmp_path):
        index = make_index()
        index.insert("doc-a", unit(1, 0, 0, 0))
        path = tmp_path / "dedup.vec"
        index.save(path)
        with pytest.raises(DimensionMismatchError):
            DedupIndex.load(path, provider_id="hashed-tf-4", dim=8)

    def test_truncated_file_rejected(self, tmp_path):
        index = make_index()
        index.insert("doc-a", unit(1, 0, 0, 0))
        path = tmp_path / "dedup.vec"
        index.save(path)
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(DedupError):
            DedupIndex.load(path, provider_id="hashed-tf-4", dim=4)

    def test_decisions_survive_round_trip(self, tmp_path):
        a, b = vector_with_similarity(0.95)
        index = make_index()
        index.insert("doc-a", a)
        path = tmp_path / "dedup.vec"
        index.save(path)
        loaded = DedupIndex.load(path, provider_id="hashed-tf-4", dim=4)
        decision = loaded.check(b)
        assert decision.is_duplicate and decision.duplicate_of == "doc-a"

    def test_similarity_matches_cosine_helper(self):
        a, b = vector_with_similarity(0.9)
        index = make_index(threshold=0.5)
        index.insert("doc-a", a)
        assert index.check(b).similarity == pytest.approx(cosine_similarity(a, b))
