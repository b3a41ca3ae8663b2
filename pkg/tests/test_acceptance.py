"""Acceptance suite: one test per criterion, each printing a pass line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines; every tolerance and time budget is asserted in the test itself.
"""
from __future__ import annotations

import time

import numpy as np
import pytest

from divsearch._kernels import greedy_select
from divsearch.ann import AnnTopology, OverfetchConfig, bucketized_knn, overfetch_and_rerank
from divsearch.core import Corpus, DiversitySpec, Item
from divsearch.errors import ConfigError
from divsearch.metrics import div_at_k, evaluate_rankings
from divsearch.pipeline import (
    PipelineConfig,
    RankerKind,
    RetrievalMode,
    config_from_dict,
    generate_corpus,
    generate_queries,
    run_experiment,
    run_pipeline,
)
from divsearch.rank import (
    DppConfig,
    EqualitySimilarity,
    ExponentialSimilarity,
    IncrementalCholesky,
    LinearSimilarity,
    RoundRobinConfig,
    build_similarity,
    dpp_rerank,
    dpp_step_oracle,
    round_robin,
)
from divsearch.token_index import (
    InvertedIndex,
    Quota,
    StrongOr,
    Term,
    build_index,
    eval_or,
    eval_strong_or,
)

from conftest import (
    FIG_ROUND_ROBIN,
    FIG_SEQUENCE,
    random_corpus,
    ranked_from_groups,
    unit_rows,
)

SPEC4 = DiversitySpec("tone", ("d1", "d2", "d3", "d4"), ordinal=True)


def _passed(number: int, message: str) -> None:
    print(f"ACCEPTANCE {number:02d} PASS - {message}")


def test_01_round_robin_golden():
    ranking = ranked_from_groups(FIG_SEQUENCE)
    cfg = RoundRobinConfig()
    out = round_robin(ranking, SPEC4, cfg)
    assert [e.group for e in out.entries] == FIG_ROUND_ROBIN
    elapsed = min(
        _timed(round_robin, ranking, SPEC4, cfg) for _ in range(5)
    )
    assert elapsed < 1e-3, f"round robin took {elapsed * 1e3:.3f} ms"
    _passed(1, f"round-robin golden sequence, {elapsed * 1e6:.0f} us")


def _timed(fn, *args, **kwargs) -> float:
    started = time.perf_counter()
    fn(*args, **kwargs)
    return time.perf_counter() - started


def _oracle_sequence(sim, utilities, theta, window, limit):
    selected: list[int] = []
    candidates = list(range(len(utilities)))
    while candidates and len(selected) < limit:
        recent = selected[-min(window, len(selected)) :] if selected else []
        pick = dpp_step_oracle(recent, candidates, sim, utilities, theta)
        selected.append(pick)
        candidates.remove(pick)
    return selected


def test_02_dpp_greedy_matches_oracle_on_200_instances():
    rng = np.random.default_rng(202)
    thetas = [0.0, 0.25, 1.0, 4.0]
    variants = [
        EqualitySimilarity(off_diag=0.2),
        LinearSimilarity(),
        ExponentialSimilarity(alpha=0.7),
    ]
    started = time.perf_counter()
    for instance in range(200):
        n = int(rng.integers(2, 13))
        window = int(rng.integers(2, 5))
        theta = thetas[instance % len(thetas)]
        cfg = DppConfig(
            theta=theta,
            window=window,
            batch_size=1,
            depth=1,
            similarity=variants[instance % len(variants)],
            jitter=1e-6,
        )
        groups = [
            None if rng.random() < 0.15 else int(rng.integers(4)) for _ in range(n)
        ]
        utilities = np.sort(rng.uniform(0.0, 1.0, n))[::-1]
        sim = build_similarity(groups, SPEC4, cfg)
        got = greedy_select(sim.jittered(), utilities, theta, window, n)
        expected = _oracle_sequence(sim, utilities, theta, window, n)
        assert got == expected, f"instance {instance}: {got} != {expected}"
    elapsed = time.perf_counter() - started
    assert elapsed < 5.0, f"200 instances took {elapsed:.2f} s"
    _passed(2, f"200/200 greedy sequences equal the oracle, {elapsed:.2f} s")


def test_03_incremental_log_det_matches_dense_factorization():
    rng = np.random.default_rng(303)
    started = time.perf_counter()
    for _ in range(100):
        n = int(rng.integers(2, 65))
        basis = rng.standard_normal((n, n + 4)) / np.sqrt(n + 4)
        matrix = basis @ basis.T + 0.2 * np.eye(n)
        state = IncrementalCholesky()
        total = 0.0
        for i in range(n):
            total += state.extend(matrix[i, : i + 1])
        _, expected = np.linalg.slogdet(matrix)
        assert abs(total - expected) <= 1e-8 * max(abs(expected), 1.0)
    elapsed = time.perf_counter() - started
    assert elapsed < 2.0, f"100 matrices took {elapsed:.2f} s"
    _passed(3, f"incremental log-det within 1e-8 of dense on 100 matrices, {elapsed:.2f} s")


def _kendall_tau_is_one(entries_a, entries_b) -> bool:
    return [e.item_id for e in entries_a] == [e.item_id for e in entries_b]


def test_04_theta_limits():
    rng = np.random.default_rng(404)
    # utility-dominant limit: pairwise gaps >= 5e-3 (well above the 1e-3
    # floor) keep 2*theta*gap above the worst log-det spread at jitter 1e-3
    for _ in range(50):
        n = int(rng.integers(5, 16))
        groups = [int(rng.integers(4)) for _ in range(n)]
        gaps = rng.uniform(5e-3, 0.05, size=n - 1)
        utilities = np.concatenate([[0.99], 0.99 - np.cumsum(gaps)])
        cfg = DppConfig(
            theta=1000.0,
            window=int(rng.integers(2, 6)),
            batch_size=n,
            depth=n,
            similarity=EqualitySimilarity(off_diag=float(rng.uniform(0.0, 0.9))),
            jitter=1e-3,
        )
        ranking = ranked_from_groups(groups, utilities=list(utilities))
        out = dpp_rerank(ranking, SPEC4, cfg)
        assert _kendall_tau_is_one(out.entries, ranking.entries)

    # diversity-dominant limit: theta = 0 puts distinct groups first
    for _ in range(50):
        num_groups = int(rng.integers(2, 5))
        spec = DiversitySpec("tone", tuple(f"d{i+1}" for i in range(num_groups)))
        n = int(rng.integers(num_groups + 2, 20))
        groups = [int(rng.integers(num_groups)) for _ in range(n)]
        for g in range(num_groups):
            groups[g] = g  # every group available within depth
        rng.shuffle(groups)
        batch = int(rng.integers(2, n + 1))
        cfg = DppConfig(
            theta=0.0,
            window=num_groups,
            batch_size=batch,
            depth=n,
            similarity=EqualitySimilarity(off_diag=float(rng.uniform(0.05, 0.9))),
        )
        out = dpp_rerank(ranked_from_groups(groups), spec, cfg)
        prefix = [e.group for e in out.entries[: min(num_groups, batch)]]
        assert len(set(prefix)) == len(prefix), f"duplicate group in prefix {prefix}"
    _passed(4, "theta=1000 keeps utility order and theta=0 separates groups, 50+50 instances")


def test_05_strong_or_quota_satisfaction_on_1000_instances():
    rng = np.random.default_rng(505)
    started = time.perf_counter()
    instances = 0
    while instances < 1000:
        corpus = random_corpus(rng, 120, 4, SPEC4, token_pool=12)
        index = build_index(corpus)
        token_docs = {
            f"t{j}": set(index.postings_for(f"t{j}")) for j in range(12)
        }
        for _ in range(10):
            k = int(rng.integers(5, 40))
            tokens = [f"t{j}" for j in rng.choice(12, size=3, replace=False)]
            desired = int(rng.integers(1, max(2, k // 3)))
            feasible = min(desired, len(token_docs[tokens[0]]), k)
            if feasible < 1:
                continue
            node = StrongOr(
                children=tuple(Term(t) for t in tokens),
                quotas=(Quota(min_count=feasible), None, None),
                scan_limit=k,
            )
            result = eval_strong_or(index, node)
            got = sum(1 for d in result.main if d in token_docs[tokens[0]])
            assert got >= feasible, f"quota unmet: {got} < {feasible}"
            assert len(result.main) <= k
            or_ids = eval_or(index, node.children, k)
            if sum(1 for d in or_ids if d in token_docs[tokens[0]]) >= feasible:
                assert result.main == or_ids, "plain-OR equivalence violated"
            instances += 1
            if instances == 1000:
                break
    elapsed = time.perf_counter() - started
    assert elapsed < 5.0, f"1000 instances took {elapsed:.2f} s"
    _passed(5, f"1000/1000 strong-OR instances satisfy quotas, {elapsed:.2f} s")


def test_06_strong_or_golden():
    index = InvertedIndex(
        {"a": [1, 6, 9], "b": [1, 2, 3, 4, 5, 7, 8, 9, 10]},
        {i: i - 1 for i in range(1, 11)},
    )
    node = StrongOr(
        children=(Term("a"), Term("b")),
        quotas=(Quota(min_count=3), None),
        scan_limit=5,
    )
    result = eval_strong_or(index, node)
    assert result.main == [1, 2, 3, 6, 9]
    _passed(6, "strong-OR promotion scenario returns [1, 2, 3, 6, 9]")


def test_07_bucketized_ann_exactness_on_50_corpora():
    rng = np.random.default_rng(707)
    topologies = [(1, 1), (1, 4), (2, 1), (2, 4), (4, 1), (4, 4)]
    started = time.perf_counter()
    for trial in range(50):
        n = int(rng.integers(300, 10001))
        corpus = random_corpus(rng, n, 64, SPEC4)
        leaves, segments = topologies[trial % len(topologies)]
        k = int(rng.integers(10, 120))
        k_d = int(rng.integers(1, 15))
        query = unit_rows(rng, 1, 64)[0]
        result = bucketized_knn(corpus, AnnTopology(leaves, segments), query, k, k_d)

        unit = query / np.linalg.norm(query)
        distances = 1.0 - corpus.embedding_matrix @ unit
        order = np.lexsort((corpus.id_array, distances))
        expected_main = [int(corpus.id_array[i]) for i in order[:k]]
        assert [nb.item_id for nb in result.main] == expected_main
        for g in range(SPEC4.num_groups):
            group_rows = [i for i in order if corpus.group_array[i] == g][:k_d]
            expected_bucket = [int(corpus.id_array[i]) for i in group_rows]
            assert [nb.item_id for nb in result.buckets[g]] == expected_bucket
    elapsed = time.perf_counter() - started
    assert elapsed < 30.0, f"50 corpora took {elapsed:.2f} s"
    _passed(7, f"bucketized ANN exact on 50 corpora, {elapsed:.2f} s")


def test_08_overfetch_schedule():
    k = 8

    def corpus_with_d4_at(rank: int, n: int = 64) -> tuple[Corpus, np.ndarray]:
        angles = np.linspace(0.05, 1.3, n)
        items = []
        for pos in range(n):
            vec = np.zeros(4)
            vec[0] = np.cos(angles[pos])
            vec[1] = np.sin(angles[pos])
            items.append(
                Item(
                    id=pos + 1,
                    embedding=vec,
                    tokens=frozenset({"x"}),
                    group=3 if pos == rank else pos % 3,
                    category="fashion",
                )
            )
        return Corpus(items, SPEC4), np.array([1.0, 0.0, 0.0, 0.0])

    # d4 first appears at rank 3k: the default cap of 2k stops the expansion
    corpus, query = corpus_with_d4_at(3 * k)
    ids, schedule = overfetch_and_rerank(
        corpus, AnnTopology(2, 2), query, OverfetchConfig(k=k, k_min=1), SPEC4,
        with_stats=True,
    )
    assert schedule == [k, 2 * k], f"unexpected schedule {schedule}"
    assert len(ids) == k
    assert all(corpus.group_of(i) != 3 for i in ids)

    # d4 within 2k: expansion stops at the first size whose brute-force
    # top-k' holds at least k_min d4 items
    corpus, query = corpus_with_d4_at(k + 3)
    ids, schedule = overfetch_and_rerank(
        corpus, AnnTopology(2, 2), query,
        OverfetchConfig(k=k, k_min=1, k_max=4 * k), SPEC4, with_stats=True,
    )
    assert schedule == [k, 2 * k]
    assert any(corpus.group_of(i) == 3 for i in ids)
    _passed(8, "overfetch follows the doubling schedule and respects the cap")


def test_09_div_at_k_properties():
    ranking = ranked_from_groups(FIG_SEQUENCE)
    assert div_at_k([ranking], SPEC4, 10) == 1.0
    assert div_at_k([ranking], SPEC4, 4) == 0.0

    spec2 = DiversitySpec("tone", ("d1", "d2"))
    skip_example = ranked_from_groups([None, 0, None, 1])
    assert div_at_k([skip_example], spec2, 2) == 1.0

    rng = np.random.default_rng(909)
    for _ in range(1000):
        length = int(rng.integers(1, 40))
        groups = [
            None if rng.random() < 0.2 else int(rng.integers(4))
            for _ in range(length)
        ]
        r = ranked_from_groups(groups)
        values = [div_at_k([r], SPEC4, k) for k in range(4, 25)]
        assert values == sorted(values), f"not monotone for {groups}"
    _passed(9, "div@k golden values and monotonicity over 1000 random rankings")


@pytest.fixture(scope="module")
def demo_setup():
    corpus = generate_corpus(
        n=50_000,
        dim=64,
        group_marginals=[0.7, 0.15, 0.1, 0.05],
        groupless_fraction=0.2,
        seed=1234,
    )
    queries = generate_queries(
        corpus, 500, seed=77, categories=["fashion", "beauty"]
    )
    return corpus, queries


def test_10_end_to_end_directional_reproduction(demo_setup):
    corpus, queries = demo_setup
    control = PipelineConfig(
        name="control",
        retrieval=RetrievalMode.EMB_PLAIN,
        ranker=RankerKind.UTILITY_ONLY,
        k=100,
        k_eval=10,
    )
    treatment = config_from_dict(
        {
            "name": "treatment",
            "retrieval": "EmbBucketized",
            "ranker": "Dpp",
            "k": 100,
            "k_eval": 10,
            "bucket_k": 12,
            "dpp": {
                "theta": 1.0,
                "window": 4,
                "batch_size": 50,
                "depth": 150,
                "similarity": {"type": "Linear"},
            },
        }
    )
    started = time.perf_counter()
    report = run_experiment(
        corpus, [control, treatment], queries, topology=AnnTopology(2, 2)
    )
    elapsed = time.perf_counter() - started
    div_delta = report.deltas["treatment"]["div_at_k"]
    util_delta = report.deltas["treatment"]["mean_utility_at_k"]
    assert div_delta is not None and div_delta >= 2.0, (
        f"div improvement {div_delta:+.2%} below +200%"
    )
    assert util_delta is not None and util_delta >= -0.05, (
        f"utility degradation {util_delta:+.2%} beyond -5%"
    )
    assert elapsed < 120.0, f"experiment took {elapsed:.1f} s"
    _passed(
        10,
        f"div@10 {div_delta:+.1%} with utility {util_delta:+.2%} "
        f"on 500 queries over 50k items, {elapsed:.1f} s",
    )


def test_11_metric_depth_sweep_trend(demo_setup):
    corpus, _ = demo_setup
    rng = np.random.default_rng(1111)
    queries = generate_queries(corpus, 200, seed=999, categories=["fashion", "beauty"])
    cfg = PipelineConfig(
        name="prod",
        retrieval=RetrievalMode.EMB_PLAIN,
        ranker=RankerKind.UTILITY_ONLY,
        k=100,
        k_eval=15,
    )
    rankings, _ = run_pipeline(corpus, cfg, queries, topology=AnnTopology(2, 2))
    # impression logs: users only see a random prefix of each ranking
    logs = []
    for ranking in rankings:
        depth = int(rng.integers(6, 30))
        logs.append(type(ranking)(ranking.entries[:depth], ranking.query_id))

    sweep = [evaluate_rankings(logs, corpus.spec, k) for k in (6, 8, 10, 15)]
    div_values = [r.div_at_k for r in sweep]
    counted = [r.queries_counted for r in sweep]
    assert div_values == sorted(div_values), f"div not non-decreasing: {div_values}"
    assert counted == sorted(counted, reverse=True), (
        f"eligible queries not non-increasing: {counted}"
    )
    assert counted[0] > counted[-1], "sweep should lose deep-k coverage"
    _passed(
        11,
        f"div@k {['%.3f' % v for v in div_values]} non-decreasing while "
        f"eligible queries {counted} non-increasing",
    )


def test_12_dpp_rerank_latency_budget():
    rng = np.random.default_rng(1212)
    n = 400
    groups = [int(rng.integers(4)) for _ in range(n)]
    utilities = np.sort(rng.uniform(0.0, 1.0, n))[::-1]
    ranking = ranked_from_groups(groups, utilities=list(utilities))
    cfg = DppConfig(
        theta=0.5,
        window=8,
        batch_size=200,
        depth=400,
        similarity=LinearSimilarity(),
    )
    out = dpp_rerank(ranking, SPEC4, cfg)  # warm up and sanity-check
    assert len(out.entries) == n
    elapsed = min(_timed(dpp_rerank, ranking, SPEC4, cfg) for _ in range(5))
    assert elapsed <= 0.010, f"rerank took {elapsed * 1e3:.2f} ms"
    _passed(12, f"N=400 w=8 B=200 rerank in {elapsed * 1e3:.2f} ms")
