import numpy as np
import pytest

from fanns.corpus import Corpus, FilterMask, Metric, build_mask, generate_synthetic, ordering_keys
from fanns.oracle import (
    GroundTruthFormatError,
    batch_ground_truth,
    exact_knn,
    load_ground_truth,
    save_ground_truth,
)


def _selection_sort_knn(corpus, query, k, mask=None):
    """Independent O(N*k) reference: repeated minimum extraction."""
    candidates = []
    for i in range(corpus.n):
        if mask is not None and not mask.bits[i]:
            continue
        key = float(ordering_keys(query, corpus.vectors[i], corpus.metric)[0])
        candidates.append((key, i))
    out = []
    for _ in range(min(k, len(candidates))):
        best = min(candidates)
        candidates.remove(best)
        out.append(best)
    return [i for _, i in out], [d for d, _ in out]


@pytest.fixture(scope="module")
def l2_corpus():
    rng = np.random.default_rng(21)
    return Corpus(
        vectors=rng.standard_normal((1000, 16)).astype(np.float32),
        attribute=rng.uniform(0, 1, size=1000),
        metric=Metric.L2,
    )


def test_self_query_is_nearest(l2_corpus):
    row = exact_knn(l2_corpus, l2_corpus.vectors[17], 1)
    assert row.ids.tolist() == [17]
    assert row.distances[0] == 0.0


def test_result_shorter_than_k_when_mask_small(l2_corpus):
    bits = np.zeros(l2_corpus.n, dtype=bool)
    bits[[3, 400, 999]] = True
    row = exact_knn(l2_corpus, l2_corpus.vectors[0], 10, FilterMask(bits))
    assert len(row) == 3
    assert set(row.ids.tolist()) == {3, 400, 999}


def test_empty_mask_gives_empty_row(l2_corpus):
    row = exact_knn(l2_corpus, l2_corpus.vectors[0], 5, FilterMask(np.zeros(l2_corpus.n, bool)))
    assert len(row) == 0


@pytest.mark.parametrize("masked", [False, True])
def test_matches_selection_sort_reference(l2_corpus, masked):
    rng = np.random.default_rng(33)
    mask = build_mask(l2_corpus, 0.5) if masked else None
    for _ in range(5):
        query = rng.standard_normal(16)
        row = exact_knn(l2_corpus, query, 10, mask)
        ref_ids, ref_dists = _selection_sort_knn(l2_corpus, query, 10, mask)
        assert row.ids.tolist() == ref_ids
        assert np.allclose(row.distances, ref_dists)


def test_distances_nondecreasing_and_ids_unique(corpus2k):
    row = exact_knn(corpus2k, corpus2k.vectors[5], 50)
    assert np.all(np.diff(row.distances) >= 0)
    assert len(set(row.ids.tolist())) == len(row)


def test_every_result_passes_mask(corpus2k):
    mask = build_mask(corpus2k, 0.8)
    row = exact_knn(corpus2k, corpus2k.vectors[9], 20, mask)
    assert mask.bits[row.ids].all()


def test_relaxing_mask_never_worsens_jth_neighbor(corpus2k):
    strict = build_mask(corpus2k, 0.8)
    loose = build_mask(corpus2k, 0.5)
    query = corpus2k.vectors[123]
    row_s = exact_knn(corpus2k, query, 10, strict)
    row_l = exact_knn(corpus2k, query, 10, loose)
    for j in range(min(len(row_s), len(row_l))):
        assert row_l.distances[j] <= row_s.distances[j] + 1e-12


def test_batch_matches_single(l2_corpus):
    query = l2_corpus.vectors[4]
    rows = batch_ground_truth(l2_corpus, query[None, :], 5, [None])
    single = exact_knn(l2_corpus, query, 5)
    assert rows[0].ids.tolist() == single.ids.tolist()


def test_batch_is_mask_major(l2_corpus):
    queries = l2_corpus.vectors[:3]
    masks = [None, build_mask(l2_corpus, 0.5)]
    rows = batch_ground_truth(l2_corpus, queries, 4, masks)
    assert len(rows) == 6
    assert rows[0].ids.tolist() == exact_knn(l2_corpus, queries[0], 4).ids.tolist()
    assert rows[3].ids.tolist() == exact_knn(l2_corpus, queries[0], 4, masks[1]).ids.tolist()


def test_batch_rejects_empty_queries(l2_corpus):
    with pytest.raises(ValueError):
        batch_ground_truth(l2_corpus, np.empty((0, 16)), 3, [None])


class TestGroundTruthFile:
    def test_round_trip(self, tmp_path, l2_corpus):
        queries = l2_corpus.vectors[:10]
        masks = [None, build_mask(l2_corpus, 0.9)]
        path = tmp_path / "gt.bin"
        rows = batch_ground_truth(l2_corpus, queries, 7, masks, out_path=path)
        loaded, k_max = load_ground_truth(path)
        assert k_max == 7
        assert len(loaded) == len(rows)
        for a, b in zip(rows, loaded):
            assert a.ids.tolist() == b.ids.tolist()
            # file stores float32 distances
            assert np.allclose(a.distances, b.distances, atol=1e-5)

    def test_round_trip_twice_is_byte_identical(self, tmp_path, l2_corpus):
        queries = l2_corpus.vectors[:4]
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        batch_ground_truth(l2_corpus, queries, 3, [None], out_path=p1)
        rows, k_max = load_ground_truth(p1)
        save_ground_truth(rows, k_max, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"XXXX" + b"\x00" * 8)
        with pytest.raises(GroundTruthFormatError):
            load_ground_truth(path)

    def test_truncated_payload(self, tmp_path, l2_corpus):
        path = tmp_path / "gt.bin"
        batch_ground_truth(l2_corpus, l2_corpus.vectors[:2], 3, [None], out_path=path)
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(GroundTruthFormatError):
            load_ground_truth(path)
