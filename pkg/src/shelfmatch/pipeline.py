"""Two-stage matching: a first stage (fuzzy strings or embeddings) and an
optional second stage (Hungarian assignment or the reranker)."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from shelfmatch import NOT_IN_LIST
from shelfmatch.corpus import Catalog, DataFormatError, Detection, MatchRecord, normalize_text
from shelfmatch.embed import (EmbedConfig, embed_batch, embedding_dim, iter_file_blocks,
                              iter_text_blocks, read_embeddings)
from shelfmatch.lap import solve_lap_max
from shelfmatch.rerank import NONE, RerankModel, rerank_select, select_from_scores
from shelfmatch.simtopk import (DEFAULT_DENSE_LIMIT, DenseLimitError, argmax_match,
                                similarity_matrix, top_k_candidates)
from shelfmatch.strdist import fuzzy_best_match

STAGE1 = ("fuzzy", "embed")
STAGE2 = ("none", "hungarian", "rerank")


class ConfigError(ValueError):
    """Invalid combination of pipeline options."""


@dataclass(frozen=True)
class PipelineConfig:
    stage1: str = "embed"
    stage2: str = "none"
    k: int = 10
    embed: EmbedConfig = field(default_factory=EmbedConfig)
    dense_limit: int = DEFAULT_DENSE_LIMIT
    tau: float | None = None
    seed: int = 0
    block_size: int = 4096
    normalize: bool = True
    model_path: str | None = None

    def __post_init__(self) -> None:
        if self.stage1 not in STAGE1:
            raise ConfigError(f"stage1 must be one of {STAGE1}, got {self.stage1!r}")
        if self.stage2 not in STAGE2:
            raise ConfigError(f"stage2 must be one of {STAGE2}, got {self.stage2!r}")
        if self.stage1 == "fuzzy" and self.stage2 != "none":
            raise ConfigError(f"--stage1 fuzzy has no second stage; got --stage2 {self.stage2}")
        if self.k < 1 or self.block_size < 1:
            raise ConfigError("K and block size must be >= 1")
        if self.tau is not None and self.stage2 == "rerank":
            raise ConfigError("--tau applies to the none and hungarian second stages only")


@dataclass
class TargetSource:
    """Where target embeddings come from: a file or on-the-fly catalogue embedding."""

    texts: list[str]
    embed_cfg: EmbedConfig
    path: Path | None = None

    def __post_init__(self) -> None:
        if self.path is not None:
            n, d = embedding_dim(self.path)
            if n != len(self.texts):
                raise DataFormatError(
                    f"{self.path}: {n} embedding rows for a catalogue of {len(self.texts)} entries"
                )
            self.dim = d
        else:
            self.dim = self.embed_cfg.dim

    def blocks(self, block_size: int) -> Iterable[tuple[int, np.ndarray]]:
        if self.path is not None:
            return iter_file_blocks(self.path, block_size)
        return iter_text_blocks(self.texts, self.embed_cfg, block_size)

    def dense(self) -> np.ndarray:
        if self.path is not None:
            return read_embeddings(self.path)
        return embed_batch(self.texts, self.embed_cfg)


def _queries(detections: Sequence[Detection], normalize: bool) -> list[str]:
    return [normalize_text(d.ocr_text) if normalize else d.ocr_text for d in detections]


def run_match(detections: Sequence[Detection], catalog: Catalog, cfg: PipelineConfig,
              model: RerankModel | None = None, target_emb: str | Path | None = None,
              query_emb: np.ndarray | None = None,
              external_scores: dict[tuple[str, str], tuple[list[float], float]] | None = None,
              ) -> list[MatchRecord]:
    """Match every detection to a catalogue id or :data:`NOT_IN_LIST`.

    ``query_emb`` replaces the built-in embedding of the detections (rows in
    detection order); ``target_emb`` names an EMB1 file aligned with the
    catalogue. ``external_scores`` maps detection keys to per-candidate
    scores plus a reject score and replaces the reranker's own scoring.
    """
    if not len(catalog):
        raise ValueError("cannot match against an empty catalogue")
    if cfg.stage2 == "rerank" and model is None and external_scores is None:
        raise ConfigError("--stage2 rerank needs a trained model (--model) or a score file")

    if cfg.stage1 == "fuzzy":
        records = fuzzy_best_match(detections, catalog, normalize=cfg.normalize)
        return _apply_tau(records, cfg.tau)

    if cfg.stage2 == "hungarian" and len(detections) * len(catalog) > cfg.dense_limit:
        raise DenseLimitError(
            f"Hungarian matching needs a dense {len(detections)} x {len(catalog)} similarity "
            f"matrix, above the limit of {cfg.dense_limit:,} entries; "
            "use --stage2 rerank for large catalogues"
        )
    texts = catalog.texts(cfg.normalize)
    queries = _queries(detections, cfg.normalize)
    source = TargetSource(texts, cfg.embed, Path(target_emb) if target_emb else None)
    B = query_emb if query_emb is not None else embed_batch(queries, cfg.embed)
    if B.shape != (len(detections), source.dim):
        raise DataFormatError(
            f"query embeddings have shape {B.shape}, expected ({len(detections)}, {source.dim})"
        )

    if cfg.stage2 == "none":
        cands = top_k_candidates(B, source.blocks(cfg.block_size), 1)
        records = [
            MatchRecord(d.image_id, d.segment_id, catalog[p].id, s, "argmax")
            for d, (p, s) in zip(detections, argmax_match(cands))
        ]
        return _apply_tau(records, cfg.tau)

    if cfg.stage2 == "hungarian":
        S = similarity_matrix(B, source.dense(), cfg.dense_limit)
        assignment = solve_lap_max(S)
        records = [
            MatchRecord(d.image_id, d.segment_id, catalog[int(j)].id, float(S[i, j]), "hungarian")
            for i, (d, j) in enumerate(zip(detections, assignment.row_to_col))
        ]
        return _apply_tau(records, cfg.tau)

    k = model.k if model is not None else cfg.k
    cands = top_k_candidates(B, source.blocks(cfg.block_size), k)
    records = []
    for d, q, cand in zip(detections, queries, cands):
        positions = cand.positions.tolist()
        if external_scores is not None:
            if d.key not in external_scores:
                raise DataFormatError(f"no external scores for detection {d.key}")
            scores, none_score = external_scores[d.key]
            if len(scores) > len(positions):
                raise DataFormatError(
                    f"detection {d.key}: {len(scores)} scores for {len(positions)} candidates"
                )
            choice = select_from_scores(scores, none_score) if scores else NONE
            prob = float(scores[choice]) if choice != NONE else float(none_score)
        else:
            choice, prob = rerank_select(model, q, [texts[p] for p in positions],
                                         cand.scores.tolist())
        predicted = NOT_IN_LIST if choice == NONE else catalog[positions[choice]].id
        records.append(MatchRecord(d.image_id, d.segment_id, predicted, prob, "rerank"))
    return records


def _apply_tau(records: list[MatchRecord], tau: float | None) -> list[MatchRecord]:
    if tau is None:
        return records
    return [
        r if r.score >= tau else MatchRecord(r.image_id, r.segment_id, NOT_IN_LIST, r.score, r.stage)
        for r in records
    ]


def load_external_scores(path: str | Path) -> dict[tuple[str, str], tuple[list[float], float]]:
    """Per-detection candidate scores from a JSONL file
    (``image_id``, ``segment_id``, ``scores``, ``none_score``)."""
    from shelfmatch.corpus import _read_jsonl

    path = Path(path)
    out = {}
    for lineno, obj in _read_jsonl(path):
        try:
            key = (str(obj["image_id"]), str(obj["segment_id"]))
            scores = [float(s) for s in obj["scores"]]
            none_score = float(obj["none_score"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DataFormatError(f"{path}:{lineno}: bad score record: {exc}") from None
        out[key] = (scores, none_score)
    return out
