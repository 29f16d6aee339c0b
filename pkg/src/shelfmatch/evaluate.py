"""Accuracy for the matching-only and detection-and-matching protocols.

matching-only keeps records whose detection is a correctly segmented book
with a catalogue entry. detection-and-matching keeps every record; the
expected answer for non-books and books missing from the catalogue is
:data:`NOT_IN_LIST`, and a merged segment is right if the prediction is
any one of the books it contains.
"""

from __future__ import annotations

from collections import Counter
from typing import Sequence

from shelfmatch import NOT_IN_LIST
from shelfmatch.corpus import DataFormatError, Detection, EvalReport, MatchRecord

MODES = ("matching_only", "detection_and_matching")


class JoinError(DataFormatError):
    """A match record has no counterpart detection with ground truth."""


def expected_ids(det: Detection) -> frozenset[str]:
    if det.gt_label == "not_a_book" or not det.gt_ids:
        return frozenset({NOT_IN_LIST})
    return frozenset(det.gt_ids)


def evaluate_accuracy(matches: Sequence[MatchRecord], detections: Sequence[Detection],
                      mode: str = "matching_only") -> EvalReport:
    mode = mode.replace("-", "_")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    by_key = {d.key: d for d in detections}
    counts: Counter[str] = Counter()
    n_total = n_correct = 0
    stages = set()
    for rec in matches:
        det = by_key.get(rec.key)
        if det is None:
            raise JoinError(f"match record {rec.key} has no detection")
        if det.gt_ids is None:
            raise JoinError(f"detection {rec.key} has no ground truth")
        if mode == "matching_only" and (det.gt_label not in (None, "book") or not det.gt_ids):
            counts["excluded"] += 1
            continue
        stages.add(rec.stage)
        truth = expected_ids(det)
        hit = rec.predicted_id in truth
        n_total += 1
        n_correct += hit
        gt_reject = NOT_IN_LIST in truth
        counts["gt_not_in_list"] += gt_reject
        counts["pred_not_in_list"] += rec.rejected
        counts["not_in_list_tp"] += gt_reject and rec.rejected
        counts["not_in_list_fp"] += rec.rejected and not gt_reject
        counts["not_in_list_fn"] += gt_reject and not rec.rejected
        if det.gt_label:
            counts[f"label_{det.gt_label}"] += 1
    if n_total == 0:
        raise ValueError(f"no records to evaluate in {mode} mode")
    stage = stages.pop() if len(stages) == 1 else "mixed"
    return EvalReport(n_correct / n_total, n_total, n_correct, stage, dict(sorted(counts.items())))
