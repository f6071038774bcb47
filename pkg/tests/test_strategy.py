import numpy as np
import pytest

from fanns.corpus import Corpus, FilterMask, Metric, build_mask, threshold_for_selectivity
from fanns.hnsw import hnsw_build, hnsw_search
from fanns.oracle import exact_knn
from fanns.strategy import (
    ConfigurationError,
    PlanKind,
    SearchParams,
    StrategyPlan,
    execute,
    predicate_invocations,
)

from conftest import sample_queries

PARAMS = SearchParams(ef_search=100, n_probe=10)


def _recall(record, gt):
    if len(gt) == 0:
        return 1.0
    hits = len(set(record.results.ids.tolist()) & set(gt.ids.tolist()))
    return hits / len(gt)


@pytest.fixture(scope="module")
def mask02(corpus2k):
    return build_mask(corpus2k, threshold_for_selectivity(corpus2k, 0.2))


@pytest.fixture(scope="module")
def mask005(corpus2k):
    return build_mask(corpus2k, threshold_for_selectivity(corpus2k, 0.05))


class TestPlanValidation:
    def test_expansion_below_one(self):
        with pytest.raises(ConfigurationError):
            StrategyPlan(PlanKind.POST, expansion=0.5)

    def test_threshold_out_of_range(self):
        with pytest.raises(ConfigurationError):
            StrategyPlan(PlanKind.ADAPTIVE_AUTO, fallback_ratio_threshold=1.0)

    def test_missing_search_param(self, corpus2k, hnsw2k, mask02):
        with pytest.raises(ConfigurationError):
            execute(hnsw2k, corpus2k, corpus2k.vectors[0], 5, mask02,
                    StrategyPlan(PlanKind.PRE_ANNS), SearchParams(n_probe=3))

    def test_unsupported_index_type(self, corpus2k, mask02):
        with pytest.raises(ConfigurationError):
            execute(object(), corpus2k, corpus2k.vectors[0], 5, mask02,
                    StrategyPlan(PlanKind.PRE_ANNS), PARAMS)

    def test_runtime_requires_mask(self, corpus2k, hnsw2k):
        with pytest.raises(ConfigurationError):
            execute(hnsw2k, corpus2k, corpus2k.vectors[0], 5, None,
                    StrategyPlan(PlanKind.RUNTIME), PARAMS)


class TestPreExact:
    def test_recall_is_one(self, corpus2k, hnsw2k, mask02):
        _, queries = sample_queries(corpus2k, 20, seed=90)
        for query in queries:
            record = execute(hnsw2k, corpus2k, query, 10, mask02,
                             StrategyPlan(PlanKind.PRE_EXACT), PARAMS)
            gt = exact_knn(corpus2k, query, 10, mask02)
            assert record.results.ids.tolist() == gt.ids.tolist()

    def test_latency_and_qps(self, corpus2k, hnsw2k, mask02):
        record = execute(hnsw2k, corpus2k, corpus2k.vectors[0], 10, mask02,
                         StrategyPlan(PlanKind.PRE_EXACT), PARAMS)
        assert record.latency > 0
        assert record.qps == pytest.approx(1.0 / record.latency)


class TestAdaptiveAuto:
    def test_low_selectivity_falls_back_to_exact(self, corpus2k, hnsw2k, mask005):
        query = corpus2k.vectors[8]
        record = execute(hnsw2k, corpus2k, query, 10, mask005,
                         StrategyPlan(PlanKind.ADAPTIVE_AUTO), PARAMS)
        assert record.plan_chosen is PlanKind.PRE_EXACT
        assert record.telemetry.fallback_used
        gt = exact_knn(corpus2k, query, 10, mask005)
        assert record.results.ids.tolist() == gt.ids.tolist()

    def test_high_selectivity_stays_approximate(self, corpus2k, hnsw2k):
        mask = build_mask(corpus2k, threshold_for_selectivity(corpus2k, 0.5))
        record = execute(hnsw2k, corpus2k, corpus2k.vectors[8], 10, mask,
                         StrategyPlan(PlanKind.ADAPTIVE_AUTO), PARAMS)
        assert record.plan_chosen is PlanKind.PRE_ANNS

    def test_safety_net_fills_short_results(self, corpus2k, hnsw2k):
        # 2000 * 0.9 = 1800 invalid; ratio 0.9 < 0.93 so no upfront fallback,
        # but valid_count < k forces the post-search safety net
        bits = np.zeros(corpus2k.n, dtype=bool)
        bits[: int(corpus2k.n * 0.1)] = True
        rng = np.random.default_rng(4)
        rng.shuffle(bits)
        mask = FilterMask(bits)
        for qid in (0, 100, 200):
            record = execute(hnsw2k, corpus2k, corpus2k.vectors[qid], 10, mask,
                             StrategyPlan(PlanKind.ADAPTIVE_AUTO), SearchParams(ef_search=10))
            assert len(record.results) == min(10, mask.valid_count)

    def test_unfiltered_runs_plain_search(self, corpus2k, hnsw2k):
        record = execute(hnsw2k, corpus2k, corpus2k.vectors[1], 10, None,
                         StrategyPlan(PlanKind.ADAPTIVE_AUTO), PARAMS)
        assert record.plan_chosen is PlanKind.PRE_ANNS
        assert len(record.results) == 10


class TestPost:
    def test_recall_below_preanns_at_unit_expansion(self, corpus2k, hnsw2k):
        mask = build_mask(corpus2k, threshold_for_selectivity(corpus2k, 0.1))
        _, queries = sample_queries(corpus2k, 100, seed=91)
        post = pre = 0.0
        for query in queries:
            gt = exact_knn(corpus2k, query, 10, mask)
            post += _recall(
                execute(hnsw2k, corpus2k, query, 10, mask,
                        StrategyPlan(PlanKind.POST, expansion=1.0), PARAMS), gt)
            pre += _recall(
                execute(hnsw2k, corpus2k, query, 10, mask,
                        StrategyPlan(PlanKind.PRE_ANNS), PARAMS), gt)
        assert post < pre

    def test_recall_nondecreasing_in_expansion(self, corpus2k, hnsw2k, mask02):
        _, queries = sample_queries(corpus2k, 50, seed=92)
        means = []
        for expansion in (1.0, 2.0, 8.0):
            total = 0.0
            for query in queries:
                gt = exact_knn(corpus2k, query, 10, mask02)
                total += _recall(
                    execute(hnsw2k, corpus2k, query, 10, mask02,
                            StrategyPlan(PlanKind.POST, expansion=expansion), PARAMS), gt)
            means.append(total / len(queries))
        assert means[0] <= means[1] + 0.02 <= means[2] + 0.04

    def test_only_valid_ids(self, corpus2k, ivf2k, mask02):
        record = execute(ivf2k, corpus2k, corpus2k.vectors[7], 10, mask02,
                         StrategyPlan(PlanKind.POST), PARAMS)
        assert mask02.bits[record.results.ids].all()


class TestRuntime:
    def test_matches_prefilter_ids_on_hnsw(self, corpus2k, hnsw2k, mask02):
        _, queries = sample_queries(corpus2k, 30, seed=93)
        for query in queries:
            record = execute(hnsw2k, corpus2k, query, 10, mask02,
                             StrategyPlan(PlanKind.RUNTIME), PARAMS)
            reference = hnsw_search(hnsw2k, corpus2k, query, 10, 100,
                                    mode="prefilter", mask=mask02)
            assert record.results.ids.tolist() == reference.ids.tolist()

    def test_invocation_counts(self, corpus2k, hnsw2k, mask02):
        record = execute(hnsw2k, corpus2k, corpus2k.vectors[3], 10, mask02,
                         StrategyPlan(PlanKind.RUNTIME), SearchParams(ef_search=50))
        count = predicate_invocations(record)
        assert 1 <= count <= corpus2k.n
        assert count < corpus2k.n
        assert count <= 50  # only pool members are ever tested

    def test_single_row_corpus(self):
        corpus = Corpus(vectors=np.ones((1, 2), dtype=np.float32),
                        attribute=np.ones(1), metric=Metric.L2)
        index = hnsw_build(corpus, 2, 2, seed=0)
        mask = FilterMask(np.ones(1, dtype=bool))
        record = execute(index, corpus, corpus.vectors[0], 1, mask,
                         StrategyPlan(PlanKind.RUNTIME), SearchParams(ef_search=4))
        assert predicate_invocations(record) == 1

    def test_invocations_requires_runtime_record(self, corpus2k, hnsw2k, mask02):
        record = execute(hnsw2k, corpus2k, corpus2k.vectors[0], 5, mask02,
                         StrategyPlan(PlanKind.PRE_ANNS), PARAMS)
        with pytest.raises(ConfigurationError):
            predicate_invocations(record)

    def test_runtime_on_ivf(self, corpus2k, ivf2k, mask02):
        query = corpus2k.vectors[15]
        record = execute(ivf2k, corpus2k, query, 10, mask02,
                         StrategyPlan(PlanKind.RUNTIME), PARAMS)
        reference = execute(ivf2k, corpus2k, query, 10, mask02,
                            StrategyPlan(PlanKind.PRE_ANNS), PARAMS)
        assert record.results.ids.tolist() == reference.results.ids.tolist()
        assert predicate_invocations(record) <= corpus2k.n


class TestMaskFreeExecution:
    @pytest.mark.parametrize("kind", [PlanKind.PRE_ANNS, PlanKind.PRE_EXACT, PlanKind.POST])
    def test_unfiltered_plans(self, corpus2k, hnsw2k, kind):
        record = execute(hnsw2k, corpus2k, corpus2k.vectors[77], 10, None,
                         StrategyPlan(kind), PARAMS)
        assert len(record.results) == 10
        gt = exact_knn(corpus2k, corpus2k.vectors[77], 10)
        assert _recall(record, gt) > 0.0
