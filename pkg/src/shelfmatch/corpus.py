"""Catalogue, detection and match-record types plus their file formats.

All matchers share :func:`normalize_text`, so OCR output and catalogue
metadata are compared on the same footing.
"""

from __future__ import annotations

import csv
import json
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from shelfmatch import NOT_IN_LIST

CATALOG_HEADER = ["id", "author", "title", "isbn"]
GT_LABELS = ("book", "not_a_book", "merged_books")
STAGES = ("fuzzy", "argmax", "hungarian", "rerank")


class DataFormatError(ValueError):
    """Raised when an input file does not follow its expected format."""


def normalize_text(raw: str) -> str:
    """Canonical form used by every matcher.

    NFKC, lowercase, anything that is not a letter, digit or whitespace
    becomes a space, whitespace runs collapse to one space, ends stripped.

    >>> normalize_text("J.R.R. Tolkien")
    'j r r tolkien'
    """
    text = unicodedata.normalize("NFKC", raw)
    text = unicodedata.normalize("NFKC", text.lower())
    kept = [c if (c.isalpha() or c.isdigit()) else " " for c in text]
    return " ".join("".join(kept).split())


@dataclass(frozen=True)
class CatalogEntry:
    id: str
    author: str
    title: str
    isbn: str | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("catalogue entry id must be non-empty")
        if not self.author and not self.title:
            raise ValueError(f"catalogue entry {self.id!r} has neither author nor title")


def compose_target_text(entry: CatalogEntry, normalize: bool = True) -> str:
    """Author and title joined by a space, as embedded for the target side."""
    parts = [p for p in (entry.author, entry.title) if p]
    joined = " ".join(parts)
    return normalize_text(joined) if normalize else joined


@dataclass(frozen=True)
class Catalog:
    """Ordered catalogue; positions are file order and never change."""

    entries: tuple[CatalogEntry, ...]
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __init__(self, entries: Iterable[CatalogEntry]) -> None:
        entries = tuple(entries)
        index: dict[str, int] = {}
        for pos, entry in enumerate(entries):
            if entry.id in index:
                raise ValueError(f"duplicate catalogue id {entry.id!r}")
            index[entry.id] = pos
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "index", index)

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, pos: int) -> CatalogEntry:
        return self.entries[pos]

    def position(self, entry_id: str) -> int:
        return self.index[entry_id]

    def texts(self, normalize: bool = True) -> list[str]:
        return [compose_target_text(e, normalize) for e in self.entries]


@dataclass(frozen=True)
class Detection:
    """One segmented text object. ``gt_ids=None`` means no ground truth was given;
    an empty tuple means the ground truth is "not in list"."""

    image_id: str
    segment_id: str
    ocr_text: str
    gt_ids: tuple[str, ...] | None = None
    gt_label: str | None = None

    def __post_init__(self) -> None:
        if self.gt_label is not None and self.gt_label not in GT_LABELS:
            raise ValueError(f"unknown gt_label {self.gt_label!r}")
        if self.gt_ids is not None:
            object.__setattr__(self, "gt_ids", tuple(self.gt_ids))
            if self.gt_label != "merged_books" and len(self.gt_ids) > 1:
                raise ValueError(
                    f"detection ({self.image_id}, {self.segment_id}) has "
                    f"{len(self.gt_ids)} gt ids but label {self.gt_label!r}"
                )

    @property
    def key(self) -> tuple[str, str]:
        return (self.image_id, self.segment_id)


@dataclass(frozen=True)
class MatchRecord:
    image_id: str
    segment_id: str
    predicted_id: str
    score: float
    stage: str

    def __post_init__(self) -> None:
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")

    @property
    def key(self) -> tuple[str, str]:
        return (self.image_id, self.segment_id)

    @property
    def rejected(self) -> bool:
        return self.predicted_id == NOT_IN_LIST


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    n_total: int
    n_correct: int
    stage: str
    counts: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.n_total <= 0:
            raise ValueError("an evaluation report needs at least one record")

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "n_total": self.n_total,
            "n_correct": self.n_correct,
            "stage": self.stage,
            "counts": dict(self.counts),
        }


# -- catalogue CSV ---------------------------------------------------------


def load_catalog(path: str | Path) -> Catalog:
    path = Path(path)
    entries: list[CatalogEntry] = []
    seen: dict[str, int] = {}
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh, strict=True)
            try:
                header = next(reader)
            except StopIteration:
                raise DataFormatError(f"{path}: empty file, expected header") from None
            if header != CATALOG_HEADER:
                raise DataFormatError(
                    f"{path}:1: header must be {','.join(CATALOG_HEADER)}, got {','.join(header)}"
                )
            for row in reader:
                line = reader.line_num
                if not row:
                    continue
                if len(row) != 4:
                    raise DataFormatError(f"{path}:{line}: expected 4 fields, got {len(row)}")
                entry_id, author, title, isbn = row
                if entry_id in seen:
                    raise DataFormatError(
                        f"{path}:{line}: duplicate id {entry_id!r} (first on line {seen[entry_id]})"
                    )
                try:
                    entries.append(CatalogEntry(entry_id, author, title, isbn or None))
                except ValueError as exc:
                    raise DataFormatError(f"{path}:{line}: {exc}") from None
                seen[entry_id] = line
    except csv.Error as exc:
        raise DataFormatError(f"{path}: malformed CSV: {exc}") from None
    except UnicodeDecodeError as exc:
        raise DataFormatError(f"{path}: not valid UTF-8: {exc}") from None
    return Catalog(entries)


def write_catalog(catalog: Catalog | Sequence[CatalogEntry], path: str | Path) -> None:
    entries = catalog.entries if isinstance(catalog, Catalog) else catalog
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CATALOG_HEADER)
        for e in entries:
            writer.writerow([e.id, e.author, e.title, e.isbn or ""])


# -- JSON lines --------------------------------------------------------------


def _read_jsonl(path: Path) -> Iterable[tuple[int, dict]]:
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}:{lineno}: malformed JSON: {exc.msg}") from None
            if not isinstance(obj, dict):
                raise DataFormatError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, obj


def _require_str(obj: dict, key: str, where: str) -> str:
    value = obj.get(key)
    if not isinstance(value, str):
        raise DataFormatError(f"{where}: field {key!r} must be a string")
    return value


def load_detections(path: str | Path) -> list[Detection]:
    path = Path(path)
    detections: list[Detection] = []
    seen: set[tuple[str, str]] = set()
    for lineno, obj in _read_jsonl(path):
        where = f"{path}:{lineno}"
        gt_ids = obj.get("gt_ids")
        if gt_ids is not None and (
            not isinstance(gt_ids, list) or not all(isinstance(g, str) for g in gt_ids)
        ):
            raise DataFormatError(f"{where}: gt_ids must be an array of strings")
        gt_label = obj.get("gt_label")
        if gt_label is not None and gt_label not in GT_LABELS:
            raise DataFormatError(f"{where}: unknown gt_label {gt_label!r}")
        try:
            det = Detection(
                _require_str(obj, "image_id", where),
                _require_str(obj, "segment_id", where),
                _require_str(obj, "ocr_text", where),
                tuple(gt_ids) if gt_ids is not None else None,
                gt_label,
            )
        except ValueError as exc:
            if isinstance(exc, DataFormatError):
                raise
            raise DataFormatError(f"{where}: {exc}") from None
        if det.key in seen:
            raise DataFormatError(f"{where}: duplicate detection key {det.key}")
        seen.add(det.key)
        detections.append(det)
    return detections


def _dump_line(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":")) + "\n"


def write_detections(detections: Iterable[Detection], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for d in detections:
            obj: dict = {"image_id": d.image_id, "segment_id": d.segment_id, "ocr_text": d.ocr_text}
            if d.gt_ids is not None:
                obj["gt_ids"] = list(d.gt_ids)
            if d.gt_label is not None:
                obj["gt_label"] = d.gt_label
            fh.write(_dump_line(obj))


def write_matches(records: Iterable[MatchRecord], path: str | Path) -> None:
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8") as fh:
            for r in records:
                fh.write(_dump_line({
                    "image_id": r.image_id,
                    "segment_id": r.segment_id,
                    "predicted_id": r.predicted_id,
                    "score": r.score,
                    "stage": r.stage,
                }))
    except OSError as exc:
        raise OSError(f"cannot write matches to {path}: {exc.strerror}") from exc


def load_matches(path: str | Path) -> list[MatchRecord]:
    path = Path(path)
    records = []
    for lineno, obj in _read_jsonl(path):
        where = f"{path}:{lineno}"
        score = obj.get("score")
        if not isinstance(score, (int, float)) or isinstance(score, bool):
            raise DataFormatError(f"{where}: score must be a number")
        try:
            records.append(MatchRecord(
                _require_str(obj, "image_id", where),
                _require_str(obj, "segment_id", where),
                _require_str(obj, "predicted_id", where),
                float(score),
                _require_str(obj, "stage", where),
            ))
        except ValueError as exc:
            if isinstance(exc, DataFormatError):
                raise
            raise DataFormatError(f"{where}: {exc}") from None
    return records


def write_report(report: EvalReport, path: str | Path) -> None:
    path = Path(path)
    try:
        path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc.strerror}") from exc


def load_report(path: str | Path) -> EvalReport:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
        return EvalReport(
            accuracy=obj["accuracy"],
            n_total=obj["n_total"],
            n_correct=obj["n_correct"],
            stage=obj["stage"],
            counts=obj.get("counts", {}),
        )
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataFormatError(f"{path}: malformed report: {exc}") from None
