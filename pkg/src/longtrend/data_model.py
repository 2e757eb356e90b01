"""Score tables, test manifests and the complete longitudinal panel.

Two CSV layouts are understood (UTF-8, header row required)::

    scores:   cohort_id,student_id,test_id,item_id,score
    manifest: test_id,organization,subject,grade,variant,year,order_index,item_id,topic

``test_id`` is only a join key between the two files; tests are matched
across cohorts by :attr:`TestKey.chain_key`, which ignores the calendar year.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import (
    EmptyIntersectionError,
    EmptyPanelError,
    InputError,
    ManifestMismatchError,
    ParseError,
)

logger = logging.getLogger(__name__)

NATIONAL_LANGUAGE = "national_language"
MATHEMATICS = "mathematics"

SCORE_COLUMNS = ("cohort_id", "student_id", "test_id", "item_id", "score")
MANIFEST_COLUMNS = (
    "test_id",
    "organization",
    "subject",
    "grade",
    "variant",
    "year",
    "order_index",
    "item_id",
    "topic",
)


@dataclass(frozen=True, order=True)
class TestKey:
    """Identity of one achievement test within a cohort's chain."""

    __test__ = False  # keep pytest from collecting this class

    test_id: str
    organization: str
    subject: str
    grade: int
    variant: str | None
    year: int
    order_index: int

    @property
    def chain_key(self) -> tuple:
        return (self.organization, self.subject, self.grade, self.variant or "")

    @property
    def label(self) -> str:
        variant = f" {self.variant}" if self.variant else ""
        return f"[{self.organization}] {self.grade} {self.subject}{variant}"


@dataclass(frozen=True)
class ItemRecord:
    item_id: str
    topic: str
    score: int


@dataclass(frozen=True)
class GroundTruth:
    """Planted structure of a synthetic cohort; empty for real data."""

    archetype: Mapping[str, str] = field(default_factory=dict)
    shifted_tests: frozenset = frozenset()
    causal_items: frozenset = frozenset()

    @property
    def is_empty(self) -> bool:
        return not (self.archetype or self.shifted_tests or self.causal_items)


Manifest = dict  # TestKey -> list[(item_id, topic)]


def _text(data: bytes | str) -> str:
    if isinstance(data, bytes):
        data = data.decode("utf-8-sig")
    return data


def _rows(data: bytes | str, columns: tuple[str, ...], what: str):
    reader = csv.reader(io.StringIO(_text(data), newline=""))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError(f"{what}: empty file", line=1) from None
    if tuple(h.strip() for h in header) != columns:
        raise ParseError(
            f"{what}: expected header {','.join(columns)}, got {','.join(header)}",
            line=1,
        )
    for row in reader:
        if not row:
            continue
        if len(row) != len(columns):
            raise ParseError(
                f"{what}: expected {len(columns)} columns, got {len(row)}",
                line=reader.line_num,
            )
        yield reader.line_num, row


def _int(value: str, name: str, line: int) -> int:
    try:
        return int(value.strip())
    except ValueError:
        raise ParseError(f"{name} must be an integer, got {value!r}", line=line) from None


def parse_test_manifest(csv_bytes: bytes | str) -> Manifest:
    """Parse a manifest CSV into ``{TestKey: [(item_id, topic), ...]}``.

    Items keep file order and topics are kept byte-for-byte, since common
    factors are later matched on exact topic strings.
    """
    keys: dict[str, TestKey] = {}
    items: dict[str, list[tuple[str, str]]] = {}
    seen: set[tuple[str, str]] = set()
    for line, row in _rows(csv_bytes, MANIFEST_COLUMNS, "manifest"):
        test_id, org, subject, grade, variant, year, order_index, item_id, topic = row
        test_id = test_id.strip()
        item_id = item_id.strip()
        if not test_id or not item_id:
            raise ParseError("test_id and item_id must be non-empty", line=line)
        if topic == "":
            raise ParseError(f"empty topic for item {item_id!r} of test {test_id!r}", line=line)
        key = TestKey(
            test_id=test_id,
            organization=org.strip(),
            subject=subject.strip(),
            grade=_int(grade, "grade", line),
            variant=variant.strip() or None,
            year=_int(year, "year", line),
            order_index=_int(order_index, "order_index", line),
        )
        if test_id in keys and keys[test_id] != key:
            raise ParseError(f"inconsistent metadata for test {test_id!r}", line=line)
        keys[test_id] = key
        if (test_id, item_id) in seen:
            raise ParseError(f"duplicate item {item_id!r} in test {test_id!r}", line=line)
        seen.add((test_id, item_id))
        items.setdefault(test_id, []).append((item_id, topic))
    if not keys:
        raise ParseError("manifest lists no tests")
    return {keys[t]: items[t] for t in keys}


def manifest_to_csv(manifest: Manifest) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_COLUMNS)
    for key, pairs in manifest.items():
        for item_id, topic in pairs:
            writer.writerow([
                key.test_id, key.organization, key.subject, key.grade,
                key.variant or "", key.year, key.order_index, item_id, topic,
            ])
    return buf.getvalue().encode("utf-8")


def _check_chain(tests: list[TestKey]) -> None:
    orders = [t.order_index for t in tests]
    if len(set(orders)) != len(orders):
        raise ParseError(f"order_index repeated within subject {tests[0].subject!r}")
    for a, b in zip(tests, tests[1:]):
        if b.grade < a.grade or b.year < a.year:
            raise ParseError(
                f"grade/year decrease along the chain between {a.test_id!r} and {b.test_id!r}"
            )


class ScorePanel:
    """Complete students x tests panel with binary item responses.

    ``responses[test_id]`` is a read-only ``(n_students, n_items)`` uint8 array
    whose columns follow the manifest item order.
    """

    def __init__(self, cohort_id, subject, tests, students, items, responses,
                 total_points=None, warnings=()):
        self.cohort_id = cohort_id
        self.subject = subject
        self.tests = tuple(tests)
        self.students = tuple(students)
        self.items = {t.test_id: tuple(items[t.test_id]) for t in self.tests}
        self.responses = {}
        for t in self.tests:
            arr = np.array(responses[t.test_id], dtype=np.uint8)
            if arr.shape != (len(self.students), len(self.items[t.test_id])):
                raise ValueError(f"response shape mismatch for {t.test_id}")
            arr.setflags(write=False)
            self.responses[t.test_id] = arr
        self.total_points = total_points
        self.warnings = tuple(warnings)
        self._index = {s: i for i, s in enumerate(self.students)}
        ratios = np.column_stack(
            [self.responses[t.test_id].mean(axis=1) for t in self.tests]
        ) if self.tests else np.empty((len(self.students), 0))
        ratios.setflags(write=False)
        self.correct_ratio = ratios

    def __repr__(self):
        return (f"ScorePanel(cohort_id={self.cohort_id!r}, subject={self.subject!r}, "
                f"n_students={len(self.students)}, n_tests={len(self.tests)})")

    def __eq__(self, other):
        if not isinstance(other, ScorePanel):
            return NotImplemented
        return (
            self.cohort_id == other.cohort_id
            and self.subject == other.subject
            and self.tests == other.tests
            and self.students == other.students
            and self.items == other.items
            and all(np.array_equal(self.responses[t], other.responses[t]) for t in self.items)
        )

    def test(self, test_id: str) -> TestKey:
        for t in self.tests:
            if t.test_id == test_id:
                return t
        raise KeyError(test_id)

    def item_scores(self, student_id: str, test: TestKey) -> list[ItemRecord]:
        row = self.responses[test.test_id][self._index[student_id]]
        return [ItemRecord(i, topic, int(s)) for (i, topic), s in zip(self.items[test.test_id], row)]

    def aggregate(self, student_id: str, test: TestKey) -> dict:
        j = self.tests.index(test)
        points = None
        if self.total_points is not None:
            points = self.total_points.get((student_id, test.test_id))
        return {"total_points": points, "correct_ratio": float(self.correct_ratio[self._index[student_id], j])}

    def scores(self, test: TestKey, kind: str = "correct_ratio") -> np.ndarray:
        """Per-student aggregate for one test, in ``students`` order."""
        if kind == "correct_ratio":
            return self.correct_ratio[:, self.tests.index(test)]
        if kind == "total_points":
            if self.total_points is None:
                raise InputError(f"cohort {self.cohort_id!r} carries no total_points")
            return np.array([self.total_points[(s, test.test_id)] for s in self.students], dtype=float)
        raise ValueError(f"unknown score kind {kind!r}")

    def manifest(self) -> Manifest:
        return {t: list(self.items[t.test_id]) for t in self.tests}

    def to_csv(self) -> bytes:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(SCORE_COLUMNS)
        for i, student in enumerate(self.students):
            for t in self.tests:
                row = self.responses[t.test_id][i]
                for (item_id, _), s in zip(self.items[t.test_id], row):
                    writer.writerow([self.cohort_id, student, t.test_id, item_id, int(s)])
        return buf.getvalue().encode("utf-8")


def parse_score_table(csv_bytes: bytes | str, manifest: Manifest, subject: str | None = None) -> ScorePanel:
    """Build a complete :class:`ScorePanel` from a long-format score CSV.

    Rows for tests of other subjects are ignored when ``subject`` is given.
    Students lacking any item of any panel test are dropped; the panel's
    ``warnings`` holds one entry per dropped student.
    """
    by_id = {k.test_id: k for k in manifest}
    item_pos = {
        k.test_id: {item_id: j for j, (item_id, _) in enumerate(pairs)}
        for k, pairs in manifest.items()
    }

    cohort_ids: set[str] = set()
    students: list[str] = []
    student_seen: set[str] = set()
    cells: dict[tuple[str, str], dict[int, int]] = {}
    subjects_seen: set[str] = set()
    for line, row in _rows(csv_bytes, SCORE_COLUMNS, "scores"):
        cohort_id, student_id, test_id, item_id, score = (c.strip() for c in row)
        if score not in ("0", "1"):
            raise ParseError(f"score must be 0 or 1, got {score!r}", line=line)
        if test_id not in by_id:
            raise ManifestMismatchError(f"line {line}: unknown test_id {test_id!r}")
        if item_id not in item_pos[test_id]:
            raise ManifestMismatchError(f"line {line}: unknown item_id {item_id!r} for test {test_id!r}")
        key = by_id[test_id]
        subjects_seen.add(key.subject)
        if subject is not None and key.subject != subject:
            continue
        cohort_ids.add(cohort_id)
        if student_id not in student_seen:
            student_seen.add(student_id)
            students.append(student_id)
        cell = cells.setdefault((student_id, test_id), {})
        j = item_pos[test_id][item_id]
        if j in cell:
            raise ParseError(f"duplicate score for student {student_id!r}, test {test_id!r}, item {item_id!r}", line=line)
        cell[j] = int(score)

    if subject is None:
        if len(subjects_seen) > 1:
            raise ParseError(f"score table covers subjects {sorted(subjects_seen)}; choose one")
        subject = next(iter(subjects_seen), None)
    if len(cohort_ids) > 1:
        raise ParseError(f"score table mixes cohorts {sorted(cohort_ids)}")
    if not cells:
        raise EmptyPanelError(f"no scores for subject {subject!r}")
    cohort_id = cohort_ids.pop()

    present = {t for (_, t) in cells}
    tests = sorted((by_id[t] for t in present), key=lambda k: k.order_index)
    _check_chain(tests)

    warnings = []
    kept = []
    for s in students:
        missing = [t.test_id for t in tests
                   if len(cells.get((s, t.test_id), ())) != len(manifest[t])]
        if missing:
            warnings.append(f"student {s!r} dropped: incomplete tests {missing}")
        else:
            kept.append(s)
    for w in warnings:
        logger.warning("%s: %s", cohort_id, w)
    if not kept:
        raise EmptyPanelError(f"cohort {cohort_id!r}: no student has complete records")

    responses = {}
    for t in tests:
        arr = np.zeros((len(kept), len(manifest[t])), dtype=np.uint8)
        for i, s in enumerate(kept):
            for j, v in cells[(s, t.test_id)].items():
                arr[i, j] = v
        responses[t.test_id] = arr
    return ScorePanel(
        cohort_id=cohort_id,
        subject=subject,
        tests=tests,
        students=kept,
        items={t.test_id: manifest[t] for t in tests},
        responses=responses,
        warnings=warnings,
    )


def intersect_common_tests(panels: Iterable[ScorePanel]) -> list[TestKey]:
    """Tests present in every panel, as the first panel's keys in chain order.

    Tests match on organization, subject, grade and variant; the year may
    differ between cohorts.
    """
    panels = list(panels)
    if len(panels) < 2:
        raise InputError("intersection needs at least two panels")
    subjects = {p.subject for p in panels}
    if len(subjects) != 1:
        raise InputError(f"panels cover different subjects: {sorted(subjects)}")
    shared = set.intersection(*({t.chain_key for t in p.tests} for p in panels))
    common = [t for t in panels[0].tests if t.chain_key in shared]
    if not common:
        raise EmptyIntersectionError(
            "no test is shared by all cohorts; check each cohort's screening report"
        )
    return common


def match_chain(panel: ScorePanel, keys: Iterable[TestKey]) -> list[TestKey]:
    """Map chain keys (typically from another cohort) onto ``panel``'s tests."""
    own = {t.chain_key: t for t in panel.tests}
    out = []
    for k in keys:
        if k.chain_key not in own:
            raise ManifestMismatchError(f"cohort {panel.cohort_id!r} has no test matching {k.label}")
        out.append(own[k.chain_key])
    return out
