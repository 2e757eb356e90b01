"""Synthetic cohorts with planted trajectories, criterion shifts and causal items.

Each student follows an archetype template on the deviation-score scale plus
Gaussian noise. Item responses come from a two-parameter logistic model on
``(level - 50) / 10`` with evenly spread difficulties. A shifted test is
answered from an independent ability, so it decorrelates from its neighbours.
A separate baseline test in another subject (by default national language,
given in the first year) is answered from the student's starting level plus
its own noise, with milder item parameters than the main chain. Causal items on that test get their log-odds moved by
``+effect/2`` for students of the upper archetype in each contrasted pair and
``-effect/2`` for the lower one. With ``baseline_subject=None`` the causal
items sit on the first test of the main chain instead.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .data_model import GroundTruth, ScorePanel, TestKey, manifest_to_csv
from .errors import InputError
from .trend_clustering import Archetype

# Start / middle / end of each template, deviation-score scale.
TEMPLATES = {
    Archetype.STAY_HIGH_STABLY.value: (58.0, 59.0, 60.0),
    Archetype.STAY_LOW_STABLY.value: (33.0, 35.0, 38.0),
    Archetype.INCREASE_FROM_LOW.value: (44.0, 46.0, 53.0),
    Archetype.DECREASE_FROM_HIGH.value: (52.0, 51.0, 46.0),
}

# +1: target class in the contrasts (high vs decrease, increase vs low).
TILT_SIGN = {
    Archetype.STAY_HIGH_STABLY.value: 1.0,
    Archetype.INCREASE_FROM_LOW.value: 1.0,
    Archetype.DECREASE_FROM_HIGH.value: -1.0,
    Archetype.STAY_LOW_STABLY.value: -1.0,
}

EQUAL_MIX = {a.value: 0.25 for a in Archetype}


@dataclass(frozen=True)
class SynthSpec:
    n_students: int = 200
    n_tests: int = 5
    items_per_test: int = 40
    archetype_mix: Mapping[str, float] = field(default_factory=lambda: dict(EQUAL_MIX))
    shift_positions: tuple = (2,)
    noise_sd: float = 3.0
    causal_items: tuple = ((4, 3.0), (11, -3.0))
    seed: int = 0
    cohort_id: str | None = None
    subject: str = "mathematics"
    organization: str = "S"
    first_grade: int = 4
    base_year: int = 2014
    discrimination: float = 1.7
    difficulty_span: float = 1.5
    baseline_subject: str | None = "national_language"
    baseline_items: int | None = 15
    baseline_noise_sd: float = 5.0
    baseline_discrimination: float = 1.0
    baseline_difficulty_span: float = 1.0

    def __post_init__(self):
        mix = {str(k): float(v) for k, v in dict(self.archetype_mix).items()}
        unknown = set(mix) - set(TEMPLATES)
        if unknown:
            raise InputError(f"unknown archetypes in mix: {sorted(unknown)}")
        if any(v < 0 for v in mix.values()) or abs(sum(mix.values()) - 1.0) > 1e-9:
            raise InputError("archetype_mix fractions must be non-negative and sum to 1")
        object.__setattr__(self, "archetype_mix", mix)
        object.__setattr__(self, "shift_positions", tuple(int(s) for s in self.shift_positions))
        object.__setattr__(self, "causal_items", tuple((int(i), float(e)) for i, e in self.causal_items))
        if self.n_tests < 2 or self.items_per_test < 1:
            raise InputError("need at least two tests and one item per test")
        if any(not 0 <= s < self.n_tests for s in self.shift_positions):
            raise InputError("shift_positions must index existing tests")
        if self.baseline_subject == self.subject:
            raise InputError("baseline_subject must differ from the clustered subject")
        n_base = self.baseline_items or self.items_per_test
        if any(not 0 <= i < n_base for i, _ in self.causal_items):
            raise InputError("causal item index out of range")
        k = sum(1 for v in mix.values() if v > 0)
        if self.n_students < 4 * k:
            raise InputError(f"n_students must be at least {4 * k}")
        if self.noise_sd < 0:
            raise InputError("noise_sd must be non-negative")

    @classmethod
    def from_json(cls, data: Mapping) -> "SynthSpec":
        data = dict(data)
        data.pop("seeds", None)
        if "causal_items" in data:
            data["causal_items"] = tuple(tuple(x) for x in data["causal_items"])
        if "shift_positions" in data:
            data["shift_positions"] = tuple(data["shift_positions"])
        return cls(**data)

    def to_json(self) -> dict:
        d = asdict(self)
        d["shift_positions"] = list(self.shift_positions)
        d["causal_items"] = [list(x) for x in self.causal_items]
        return d


@dataclass(frozen=True)
class SynthCohort:
    panel: ScorePanel
    truth: GroundTruth
    baseline: ScorePanel | None = None
    # (n_students, n_tests) planted levels on the deviation-score scale
    latent: np.ndarray | None = None

    @property
    def baseline_test(self) -> TestKey:
        return (self.baseline or self.panel).tests[0]

    def panels(self) -> list:
        return [self.panel] + ([self.baseline] if self.baseline is not None else [])


def template_levels(archetype: str, n_tests: int) -> np.ndarray:
    """Template interpolated piecewise-linearly over ``n_tests`` positions."""
    start, mid, end = TEMPLATES[archetype]
    u = np.linspace(0.0, 1.0, n_tests)
    return np.interp(u, [0.0, 0.5, 1.0], [start, mid, end])


def _allocate(n: int, mix: Mapping[str, float]) -> dict:
    """Largest-remainder split of ``n`` students over the mix, in template order."""
    names = [a for a in TEMPLATES if mix.get(a, 0.0) > 0]
    quotas = {a: n * mix[a] for a in names}
    counts = {a: int(np.floor(q)) for a, q in quotas.items()}
    rest = n - sum(counts.values())
    order = sorted(names, key=lambda a: (-(quotas[a] - counts[a]), names.index(a)))
    for a in order[:rest]:
        counts[a] += 1
    return counts


def generate_cohort(spec: SynthSpec) -> SynthCohort:
    rng = np.random.default_rng(spec.seed)
    counts = _allocate(spec.n_students, spec.archetype_mix)
    small = [a for a, c in counts.items() if c < 2]
    if small:
        raise InputError(f"archetypes with fewer than two students: {small}")
    arche = np.array([a for a, c in counts.items() for _ in range(c)])
    arche = arche[rng.permutation(spec.n_students)]

    n, T, J = spec.n_students, spec.n_tests, spec.items_per_test
    latent = np.array([template_levels(a, T) for a in arche])
    latent = latent + rng.normal(0.0, spec.noise_sd, size=(n, T))
    for s in spec.shift_positions:
        latent[:, s] = rng.normal(50.0, 10.0, size=n)
    ability = (latent - 50.0) / 10.0

    cohort_id = spec.cohort_id or f"synth-{spec.seed}"
    width = max(4, len(str(n)))
    students = [f"{cohort_id}-s{i:0{width}d}" for i in range(n)]
    tilt = 0.5 * np.array([TILT_SIGN[a] for a in arche])

    def answer(theta, n_items, causal=(), a=spec.discrimination, span=spec.difficulty_span):
        b = np.linspace(-span, span, n_items)[rng.permutation(n_items)]
        logit = a * (theta[:, None] - b[None, :])
        for j, effect in causal:
            # planted items sit at median difficulty so the tilt is not lost at a ceiling
            logit[:, j] = a * theta + effect * tilt
        prob = 1.0 / (1.0 + np.exp(-logit))
        return (rng.random((n, n_items)) < prob).astype(np.uint8)

    on_chain = spec.baseline_subject is None
    tests, items, responses = [], {}, {}
    for t in range(T):
        year = spec.base_year + t
        key = TestKey(f"T{t + 1}", spec.organization, spec.subject, spec.first_grade + t,
                      None, year, t)
        tests.append(key)
        items[key.test_id] = [(f"{year}-{j + 1}", f"skill {t + 1}.{j + 1}") for j in range(J)]
        causal = spec.causal_items if (on_chain and t == 0) else ()
        responses[key.test_id] = answer(ability[:, t], J, causal)
    panel = ScorePanel(cohort_id, spec.subject, tests, students, items, responses)

    baseline = None
    if on_chain:
        causal_test = tests[0]
        causal_topics = items["T1"]
    else:
        nb = spec.baseline_items or J
        start = np.array([template_levels(a, T)[0] for a in arche])
        start = start + rng.normal(0.0, spec.baseline_noise_sd, size=n)
        causal_test = TestKey("B1", spec.organization, spec.baseline_subject, spec.first_grade,
                              None, spec.base_year, 0)
        causal_topics = [(f"{spec.base_year}-{j + 1}", f"{spec.baseline_subject} topic {j + 1}")
                         for j in range(nb)]
        baseline = ScorePanel(cohort_id, spec.baseline_subject, [causal_test], students,
                              {"B1": causal_topics},
                              {"B1": answer((start - 50.0) / 10.0, nb, spec.causal_items,
                                             spec.baseline_discrimination,
                                             spec.baseline_difficulty_span)})

    truth = GroundTruth(
        archetype=dict(zip(students, arche.tolist())),
        shifted_tests=frozenset(tests[s] for s in spec.shift_positions),
        causal_items=frozenset((causal_topics[j][0], effect) for j, effect in spec.causal_items),
    )
    latent.setflags(write=False)
    return SynthCohort(panel, truth, baseline, latent)


def truth_json(cohort: SynthCohort) -> dict:
    truth = cohort.truth
    key = cohort.baseline_test
    source = cohort.baseline or cohort.panel
    topics = dict(source.items[key.test_id])
    return {
        "cohort_id": cohort.panel.cohort_id,
        "archetypes": dict(truth.archetype),
        "shifted_tests": sorted(t.test_id for t in truth.shifted_tests),
        "baseline_test": {"test_id": key.test_id, "subject": key.subject, "grade": key.grade},
        "causal_items": [
            {"test_id": key.test_id, "item_id": i, "topic": topics[i], "log_odds": e}
            for i, e in sorted(truth.causal_items)
        ],
    }


def emit_truth(cohort: SynthCohort, out_dir) -> list:
    """Write ``score.csv``, ``manifest.csv`` and ``truth.json``; return the paths.

    The baseline test, when present, shares both CSVs with the main chain;
    the parser separates them by subject.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "score.csv", out / "manifest.csv", out / "truth.json"]
    score = cohort.panel.to_csv()
    manifest = dict(cohort.panel.manifest())
    if cohort.baseline is not None:
        # drop the repeated header line
        score += cohort.baseline.to_csv().split(b"\n", 1)[1]
        manifest.update(cohort.baseline.manifest())
    paths[0].write_bytes(score)
    paths[1].write_bytes(manifest_to_csv(manifest))
    paths[2].write_text(json.dumps(truth_json(cohort), indent=2) + "\n", encoding="utf-8")
    return paths
