import json

import numpy as np
import pytest

from shelfmatch import NOT_IN_LIST
from shelfmatch.corpus import Catalog, CatalogEntry, Detection, MatchRecord, normalize_text
from shelfmatch.embed import EmbedConfig, embed_batch, write_embeddings
from shelfmatch.evaluate import JoinError, evaluate_accuracy
from shelfmatch.lap import assignment_total, greedy_repair
from shelfmatch.pipeline import ConfigError, PipelineConfig, load_external_scores, run_match
from shelfmatch.rerank import RerankModel
from shelfmatch.simtopk import DenseLimitError, similarity_matrix
from shelfmatch.synth import NO_CORRUPTION, CorruptionConfig, gen_benchmark

DIM = 8


def _unit(*xs):
    v = np.zeros(DIM, dtype=np.float32)
    v[: len(xs)] = xs
    return v / np.linalg.norm(v)


@pytest.fixture
def collision(tmp_path):
    """Two detections whose nearest target is the same catalogue entry."""
    cat = Catalog([CatalogEntry("t0", "a", "x"), CatalogEntry("t1", "b", "y")])
    dets = [Detection("img", "0", "x", ("t0",), "book"), Detection("img", "1", "y", ("t1",), "book")]
    write_embeddings(np.stack([_unit(1), _unit(0, 1)]), tmp_path / "t.emb")
    B = np.stack([_unit(0.9, 0.436), _unit(0.8, 0.6)])
    return cat, dets, str(tmp_path / "t.emb"), B


@pytest.mark.parametrize("kwargs", [
    {"stage1": "regex"}, {"stage2": "both"}, {"stage1": "fuzzy", "stage2": "hungarian"},
    {"k": 0}, {"stage2": "rerank", "tau": 0.5},
])
def test_config_invariants(kwargs):
    with pytest.raises(ConfigError):
        PipelineConfig(**kwargs)


def test_hungarian_resolves_collision(collision):
    cat, dets, temb, B = collision
    cfg = PipelineConfig(embed=EmbedConfig(dim=DIM))
    arg = run_match(dets, cat, cfg, target_emb=temb, query_emb=B)
    assert [r.predicted_id for r in arg] == ["t0", "t0"]
    hun = run_match(dets, cat, PipelineConfig(stage2="hungarian", embed=EmbedConfig(dim=DIM)),
                    target_emb=temb, query_emb=B)
    assert [r.predicted_id for r in hun] == ["t0", "t1"]
    assert {r.stage for r in hun} == {"hungarian"}
    assert evaluate_accuracy(hun, dets).accuracy == 1.0
    assert evaluate_accuracy(arg, dets).accuracy == 0.5


def test_more_detections_than_targets_rejected(collision):
    cat, dets, temb, B = collision
    dets = dets + [Detection("img", "2", "z", ("t0",), "book")]
    with pytest.raises(ValueError):
        run_match(dets, cat, PipelineConfig(stage2="hungarian"))


def test_dense_limit_suggests_rerank(collision):
    cat, dets, _, _ = collision
    with pytest.raises(DenseLimitError, match="--stage2 rerank"):
        run_match(dets, cat, PipelineConfig(stage2="hungarian", dense_limit=3))


def test_tau_rejects_low_scores(collision):
    cat, dets, temb, B = collision
    cfg = PipelineConfig(embed=EmbedConfig(dim=DIM), tau=0.85)
    recs = run_match(dets, cat, cfg, target_emb=temb, query_emb=B)
    assert [r.predicted_id for r in recs] == ["t0", NOT_IN_LIST]


def test_bad_target_embedding_rows(tmp_path, collision):
    cat, dets, _, B = collision
    write_embeddings(np.stack([_unit(1)] * 3), tmp_path / "bad.emb")
    with pytest.raises(ValueError):
        run_match(dets, cat, PipelineConfig(embed=EmbedConfig(dim=DIM)),
                  target_emb=tmp_path / "bad.emb", query_emb=B)


def test_rerank_needs_model(collision):
    cat, dets, _, _ = collision
    with pytest.raises(ConfigError):
        run_match(dets, cat, PipelineConfig(stage2="rerank"))


def test_external_scores(tmp_path, collision):
    cat, dets, temb, B = collision
    rows = [{"image_id": "img", "segment_id": "0", "scores": [0.1, 0.7], "none_score": 0.2},
            {"image_id": "img", "segment_id": "1", "scores": [0.1, 0.1], "none_score": 0.5}]
    (tmp_path / "s.jsonl").write_text("".join(json.dumps(r) + "\n" for r in rows))
    scores = load_external_scores(tmp_path / "s.jsonl")
    recs = run_match(dets, cat, PipelineConfig(stage2="rerank", k=2, embed=EmbedConfig(dim=DIM)),
                     target_emb=temb, query_emb=B, external_scores=scores)
    # detection 0 ranks t0 then t1, so index 1 is t1
    assert [r.predicted_id for r in recs] == ["t1", NOT_IN_LIST]
    assert recs[0].score == 0.7


@pytest.fixture(scope="module")
def bench():
    return gen_benchmark(120, 3, CorruptionConfig(seed=13), n_not_in_list=10)


@pytest.mark.parametrize("stage1, stage2", [("fuzzy", "none"), ("embed", "none"),
                                            ("embed", "hungarian")])
def test_matchers_deterministic(bench, stage1, stage2):
    cfg = PipelineConfig(stage1=stage1, stage2=stage2)
    a = run_match(bench.detections, bench.catalog, cfg)
    assert a == run_match(bench.detections, bench.catalog, cfg)
    assert len(a) == len(bench.detections)


def test_block_size_does_not_change_argmax(bench):
    a = run_match(bench.detections, bench.catalog, PipelineConfig(block_size=7))
    assert a == run_match(bench.detections, bench.catalog, PipelineConfig())


def test_hungarian_injective_and_optimal(bench):
    hun = run_match(bench.detections, bench.catalog, PipelineConfig(stage2="hungarian"))
    ids = [r.predicted_id for r in hun]
    assert len(set(ids)) == len(ids) and NOT_IN_LIST not in ids
    S = similarity_matrix(embed_batch([normalize_text(d.ocr_text) for d in bench.detections]),
                          embed_batch(bench.catalog.texts()))
    cols = [bench.catalog.position(i) for i in ids]
    assert [r.score for r in hun] == [S[i, j] for i, j in enumerate(cols)]
    assert assignment_total(S, cols) >= greedy_repair(S).total - 1e-9


def test_hungarian_beats_argmax_objective(bench):
    hun = run_match(bench.detections, bench.catalog, PipelineConfig(stage2="hungarian"))
    arg = run_match(bench.detections, bench.catalog, PipelineConfig())
    # per row argmax is an upper bound on any assignment, so the gap is only collisions
    assert sum(r.score for r in hun) <= sum(r.score for r in arg) + 1e-9
    assert evaluate_accuracy(hun, bench.detections).accuracy >= \
        evaluate_accuracy(arg, bench.detections).accuracy - 0.01


def test_zero_corruption_is_perfect():
    b = gen_benchmark(80, 4, NO_CORRUPTION)
    for stage1, stage2 in [("fuzzy", "none"), ("embed", "none"), ("embed", "hungarian")]:
        recs = run_match(b.detections, b.catalog, PipelineConfig(stage1=stage1, stage2=stage2))
        assert evaluate_accuracy(recs, b.detections).accuracy == 1.0


def test_rerank_with_zero_model(bench):
    recs = run_match(bench.detections, bench.catalog, PipelineConfig(stage2="rerank"),
                     model=RerankModel(k=5))
    top1 = run_match(bench.detections, bench.catalog, PipelineConfig())
    assert [r.predicted_id for r in recs] == [r.predicted_id for r in top1]
    assert all(r.score == pytest.approx(1 / 6) for r in recs)


# evaluation

def _det(seg, gt, label="book"):
    return Detection("i", seg, "text", gt, label)


def _rec(seg, pred):
    return MatchRecord("i", seg, pred, 1.0, "argmax")


def test_accuracy_two_of_three():
    dets = [_det("0", ("a",)), _det("1", ("b",)), _det("2", ("c",))]
    recs = [_rec("0", "a"), _rec("1", "b"), _rec("2", "a")]
    rep = evaluate_accuracy(recs, dets)
    assert rep.accuracy == 2 / 3 and rep.n_total == 3 and rep.n_correct == 2
    assert rep.stage == "argmax"


def test_matching_only_excludes_non_books():
    dets = [_det("0", ("a",)), _det("1", (), "not_a_book"), _det("2", ())]
    recs = [_rec("0", "a"), _rec("1", NOT_IN_LIST), _rec("2", "b")]
    only = evaluate_accuracy(recs, dets, "matching_only")
    assert only.n_total == 1 and only.accuracy == 1.0 and only.counts["excluded"] == 2
    full = evaluate_accuracy(recs, dets, "detection-and-matching")
    assert full.n_total == 3 and full.n_correct == 2
    assert full.counts["not_in_list_tp"] == 1 and full.counts["not_in_list_fn"] == 1


def test_merged_books_any_member_counts():
    dets = [_det("0", ("a", "b"), "merged_books"), _det("1", ("a", "b"), "merged_books")]
    rep = evaluate_accuracy([_rec("0", "b"), _rec("1", "c")], dets, "detection_and_matching")
    assert rep.n_correct == 1


def test_join_errors():
    with pytest.raises(JoinError):
        evaluate_accuracy([_rec("9", "a")], [_det("0", ("a",))])
    with pytest.raises(JoinError):
        evaluate_accuracy([_rec("0", "a")], [_det("0", None, None)])
    with pytest.raises(ValueError):
        evaluate_accuracy([_rec("0", "a")], [_det("0", ("a",))], "everything")
