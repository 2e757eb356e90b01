"""Stage orchestration: screen -> intersect -> cluster -> match -> infer -> common factors.

The file-based stages (:func:`cmd_screen`, :func:`cmd_cluster`,
:func:`cmd_infer`) read their predecessors' outputs from the run directory,
and :func:`cmd_run_all` simply calls them in order, so a full run and a
manual stage-by-stage run write the same bytes. :func:`analyze` runs the
same steps in memory for sweeps over many synthetic cohorts.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import __version__
from .data_model import (
    ScorePanel,
    TestKey,
    intersect_common_tests,
    match_chain,
    parse_score_table,
    parse_test_manifest,
)
from .errors import InputError, ValidationError
from .factor_inference import (
    FactorReport,
    build_design,
    extract_common_factors,
    factor_report_json,
    fit_summary,
    fit_with_fallback,
    reduce_variables,
    regression_csv,
    significance_tiers,
)
from .screening import (
    ScreeningPolicy,
    correlation_matrix,
    screen_tests,
    skip_screening,
    validate_chain,
    write_screening,
)
from .trend_clustering import (
    Archetype,
    Clustering,
    build_trend_vectors,
    centroids_csv,
    clusters_csv,
    kmeans_restarts,
    label_clusters,
    match_clusterings,
    trajectories_svg,
)

logger = logging.getLogger(__name__)

DEFAULT_PAIRS = (
    (Archetype.STAY_HIGH_STABLY.value, Archetype.DECREASE_FROM_HIGH.value),
    (Archetype.INCREASE_FROM_LOW.value, Archetype.STAY_LOW_STABLY.value),
)

MANIFEST_NAME = "run_manifest.json"


# ---------------------------------------------------------------- config


@dataclass(frozen=True)
class CohortInput:
    name: str
    scores: Path
    manifest: Path
    # strings as written in the config, used for hashing
    scores_ref: str = ""
    manifest_ref: str = ""


@dataclass(frozen=True)
class ClusterSettings:
    k: int = 4
    seed: int = 0
    restarts: int = 10
    mode: str = "deviation"

    def __post_init__(self):
        if self.k < 1:
            raise InputError("clustering.k must be at least 1")
        if self.restarts < 1:
            raise InputError("clustering.restarts must be at least 1")
        if self.mode not in ("deviation", "ratio"):
            raise InputError(f"clustering.mode must be 'deviation' or 'ratio', got {self.mode!r}")


@dataclass(frozen=True)
class InferenceSettings:
    baseline: Mapping | None = None
    pairs: tuple = DEFAULT_PAIRS
    vif_threshold: float = 10.0
    alpha: float = 0.10
    ridge_fallback: bool = False

    def __post_init__(self):
        pairs = tuple((str(a), str(b)) for a, b in self.pairs)
        if any(a == b for a, b in pairs):
            raise InputError("an inference pair must contrast two different labels")
        object.__setattr__(self, "pairs", pairs)
        if self.baseline is not None:
            object.__setattr__(self, "baseline", dict(self.baseline))


@dataclass(frozen=True)
class RunConfig:
    cohorts: tuple
    subject: str
    out: Path = Path("results")
    screening: ScreeningPolicy = ScreeningPolicy()
    clustering: ClusterSettings = ClusterSettings()
    inference: InferenceSettings = InferenceSettings()
    skip_screening: bool = False
    require_consistency: bool = False

    def __post_init__(self):
        if not self.cohorts:
            raise InputError("config lists no cohorts")
        names = [c.name for c in self.cohorts]
        if len(set(names)) != len(names):
            raise InputError(f"duplicate cohort names: {names}")
        if self.inference.pairs and self.clustering.k < 2:
            raise InputError("k must be at least 2 when inference pairs are requested")

    @property
    def mode(self) -> str:
        # the unscreened ablation compares raw correct ratios
        return "ratio" if self.skip_screening else self.clustering.mode

    @classmethod
    def from_dict(cls, data: Mapping, base_dir=".") -> "RunConfig":
        base = Path(base_dir)
        data = dict(data)
        try:
            shared = data.get("manifest")
            cohorts = []
            for i, entry in enumerate(data["cohorts"]):
                mref = entry.get("manifest", shared)
                if mref is None:
                    raise InputError(f"cohort {i} has no manifest and no shared manifest is given")
                name = str(entry.get("name", entry.get("id", f"cohort{i + 1}")))
                cohorts.append(CohortInput(name, base / entry["scores"], base / mref,
                                           str(entry["scores"]), str(mref)))
            screening = ScreeningPolicy(**data.get("screening", {}))
            clustering = ClusterSettings(**data.get("clustering", {}))
            inf = dict(data.get("inference", {}))
            if "pairs" in inf:
                inf["pairs"] = tuple(tuple(p) for p in inf["pairs"])
            inference = InferenceSettings(**inf)
            return cls(
                cohorts=tuple(cohorts),
                subject=str(data["subject"]),
                out=base / data.get("out", "results"),
                screening=screening,
                clustering=clustering,
                inference=inference,
                skip_screening=bool(data.get("skip_screening", False)),
                require_consistency=bool(data.get("require_consistency", False)),
            )
        except KeyError as exc:
            raise InputError(f"config is missing required key {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            raise InputError(f"invalid config: {exc}") from None

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise InputError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(data, path.parent)

    def with_overrides(self, seed=None, out=None, skip_screening=None, require_consistency=None) -> "RunConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, clustering=replace(cfg.clustering, seed=int(seed)))
        if out is not None:
            cfg = replace(cfg, out=Path(out))
        if skip_screening:
            cfg = replace(cfg, skip_screening=True)
        if require_consistency:
            cfg = replace(cfg, require_consistency=True)
        return cfg

    def canonical(self) -> dict:
        """Settings that determine results; the output directory is left out."""
        return {
            "cohorts": [{"name": c.name, "scores": c.scores_ref or str(c.scores),
                         "manifest": c.manifest_ref or str(c.manifest)} for c in self.cohorts],
            "subject": self.subject,
            "screening": asdict(self.screening),
            "clustering": asdict(self.clustering),
            "inference": {
                "baseline": self.inference.baseline,
                "pairs": [list(p) for p in self.inference.pairs],
                "vif_threshold": self.inference.vif_threshold,
                "alpha": self.inference.alpha,
                "ridge_fallback": self.inference.ridge_fallback,
            },
            "skip_screening": self.skip_screening,
            "require_consistency": self.require_consistency,
        }

    def config_hash(self) -> str:
        return _sha256(_dumps(self.canonical()).encode("utf-8"))

    def check_inputs(self) -> None:
        for c in self.cohorts:
            for p in (c.scores, c.manifest):
                if not Path(p).is_file():
                    raise InputError(f"input file not found: {p}")


# ---------------------------------------------------------------- in-memory steps


@dataclass
class CohortData:
    name: str
    panel: ScorePanel
    # subject -> panel, for baseline tests outside the clustered subject
    others: dict = field(default_factory=dict)

    def panel_for(self, subject: str) -> ScorePanel:
        if subject == self.panel.subject:
            return self.panel
        if subject not in self.others:
            raise InputError(f"cohort {self.name!r} has no {subject!r} scores")
        return self.others[subject]


def load_cohort(ci: CohortInput, subject: str, extra_subjects: Sequence[str] = ()) -> CohortData:
    manifest = parse_test_manifest(Path(ci.manifest).read_bytes())
    raw = Path(ci.scores).read_bytes()
    panel = parse_score_table(raw, manifest, subject=subject)
    others = {s: parse_score_table(raw, manifest, subject=s) for s in extra_subjects if s != subject}
    for w in panel.warnings:
        logger.warning("%s: %s", ci.name, w)
    return CohortData(ci.name, panel, others)


def restrict(panel: ScorePanel, tests: Sequence[TestKey]) -> ScorePanel:
    tests = list(tests)
    return ScorePanel(panel.cohort_id, panel.subject, tests, panel.students,
                      {t.test_id: panel.items[t.test_id] for t in tests},
                      {t.test_id: panel.responses[t.test_id] for t in tests},
                      panel.total_points, panel.warnings)


def screen_panel(panel: ScorePanel, policy: ScreeningPolicy, skip: bool = False):
    matrix = correlation_matrix(panel, policy)
    outcome = skip_screening(matrix, policy) if skip else screen_tests(matrix, policy)
    if not skip:
        validate_chain(outcome, policy)
    return matrix, outcome


def common_chains(panels: Mapping[str, ScorePanel], retained: Mapping[str, Sequence[TestKey]]) -> dict:
    """Each cohort's tests matching the chain retained by every cohort."""
    names = list(panels)
    if len(names) == 1:
        return {names[0]: list(retained[names[0]])}
    kept = [restrict(panels[n], retained[n]) for n in names]
    common = intersect_common_tests(kept)
    return {n: match_chain(p, common) for n, p in zip(names, kept)}


def cluster_panel(panel: ScorePanel, chain: Sequence[TestKey], settings: ClusterSettings,
                  score_kind: str = "correct_ratio", mode: str = "deviation") -> Clustering:
    vectors = build_trend_vectors(panel, chain, score_kind, mode)
    if settings.k > len(vectors):
        raise InputError(f"k={settings.k} exceeds the {len(vectors)} students of {panel.cohort_id!r}")
    clustering = kmeans_restarts(vectors, settings.k, seed=settings.seed, restarts=settings.restarts)
    clustering.labels = label_clusters(clustering, len(chain), mode)
    return clustering


def consistency(clusterings: Mapping[str, Clustering]) -> dict:
    """Verdict over all cohorts: each is compared with the first."""
    names = list(clusterings)
    if len(names) < 2:
        return {"verdict": "not_applicable", "comparisons": []}
    first = names[0]
    reports = [match_clusterings(clusterings[first], clusterings[n], (first, n)) for n in names[1:]]
    verdict = "consistent" if all(r.consistent for r in reports) else "inconsistent"
    comps = [{"cohorts": [first, n], **r.to_json()} for n, r in zip(names[1:], reports)]
    return {"verdict": verdict, "comparisons": comps}


def resolve_baseline(cohort: CohortData, chain: Sequence[TestKey], selector: Mapping | None):
    """Baseline panel and test: the first chain test unless a selector is given."""
    if selector is None:
        return cohort.panel, chain[0]
    sel = dict(selector)
    subject = sel.get("subject", cohort.panel.subject)
    panel = cohort.panel_for(subject)
    fields = ("test_id", "organization", "grade", "variant", "year")
    hits = [t for t in panel.tests if all(getattr(t, f) == sel[f] for f in fields if f in sel)]
    if len(hits) != 1:
        raise InputError(f"baseline selector {sel} matches {len(hits)} tests in cohort {cohort.name!r}")
    return panel, hits[0]


def pair_name(pair: Sequence[str]) -> str:
    return f"{pair[0]}_vs_{pair[1]}"


def pair_status(clusterings: Mapping[str, Clustering], pair: Sequence[str]) -> str | None:
    """Reason a pair cannot be fitted, or None."""
    for name, c in clusterings.items():
        for lab in pair:
            size = len(c.members(lab))
            if size == 0:
                return f"label {lab!r} absent in cohort {name!r}"
            if size < 2:
                return f"label {lab!r} has fewer than two students in cohort {name!r}"
    return None


@dataclass
class PairResult:
    pair: tuple
    status: str
    reason: str = ""
    designs: dict = field(default_factory=dict)
    fits: dict = field(default_factory=dict)
    rows: dict = field(default_factory=dict)
    report: FactorReport | None = None


def infer_pair(cohorts: Mapping[str, CohortData], clusterings: Mapping[str, Clustering],
               baselines: Mapping[str, tuple], pair: Sequence[str],
               settings: InferenceSettings) -> PairResult:
    pair = tuple(pair)
    reason = pair_status(clusterings, pair)
    if reason:
        return PairResult(pair, "skipped", reason)
    out = PairResult(pair, "fitted")
    for name, c in clusterings.items():
        panel, test = baselines[name]
        design = reduce_variables(build_design(panel, test, c, *pair), settings.vif_threshold)
        fit = fit_with_fallback(design, ridge_fallback=settings.ridge_fallback)
        out.designs[name], out.fits[name] = design, fit
        out.rows[name] = significance_tiers(fit, panel.items[test.test_id])
    if len(out.rows) >= 2:
        out.report = extract_common_factors(out.rows, settings.alpha)
    return out


@dataclass
class AnalysisResult:
    screening: dict
    chains: dict
    clusterings: dict
    consistency: dict
    pairs: list


def analyze(cohorts: Sequence[CohortData], config: RunConfig) -> AnalysisResult:
    """All stages in memory; ``config.cohorts`` paths are ignored."""
    by_name = {c.name: c for c in cohorts}
    scr = {n: screen_panel(c.panel, config.screening, config.skip_screening) for n, c in by_name.items()}
    chains = common_chains({n: c.panel for n, c in by_name.items()},
                           {n: o.retained for n, (_, o) in scr.items()})
    clusterings = {n: cluster_panel(by_name[n].panel, chains[n], config.clustering,
                                    config.screening.score_kind, config.mode) for n in by_name}
    cons = consistency(clusterings)
    pairs = []
    if config.inference.pairs:
        baselines = {n: resolve_baseline(by_name[n], chains[n], config.inference.baseline) for n in by_name}
        pairs = [infer_pair(by_name, clusterings, baselines, p, config.inference)
                 for p in config.inference.pairs]
    return AnalysisResult(scr, chains, clusterings, cons, pairs)


# ---------------------------------------------------------------- file stages


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(text.encode("utf-8"))


def _read_json(path: Path, stage: str) -> dict:
    if not path.is_file():
        raise InputError(f"{path} not found; run the {stage} stage first")
    return json.loads(path.read_text(encoding="utf-8"))


def _extra_subjects(config: RunConfig) -> tuple:
    base = config.inference.baseline or {}
    s = base.get("subject")
    return (s,) if s and s != config.subject else ()


def _load_all(config: RunConfig) -> dict:
    config.check_inputs()
    extra = _extra_subjects(config)
    return {c.name: load_cohort(c, config.subject, extra) for c in config.cohorts}


def _chain_from_ids(panel: ScorePanel, ids: Sequence[str]) -> list:
    return [panel.test(t) for t in ids]


def _record(config: RunConfig, stage: str, outputs: Sequence[Path], seconds: float) -> None:
    """Merge one stage into ``run_manifest.json``.

    ``content_hash`` covers everything except timings, so identical reruns
    produce identical hashes.
    """
    out = config.out
    path = out / MANIFEST_NAME
    chash = config.config_hash()
    manifest = {}
    if path.is_file():
        manifest = json.loads(path.read_text(encoding="utf-8"))
        if manifest.get("config_hash") != chash:
            manifest = {}
    inputs = {}
    for c in config.cohorts:
        for ref, p in ((c.scores_ref, c.scores), (c.manifest_ref, c.manifest)):
            inputs[ref or str(p)] = _sha256(Path(p).read_bytes())
    stages = manifest.get("stages", {})
    stages[stage] = {p.relative_to(out).as_posix(): _sha256(p.read_bytes()) for p in sorted(outputs)}
    timings = manifest.get("timings", {})
    timings[stage] = round(seconds, 6)
    body = {
        "tool": f"longtrend {__version__}",
        "config_hash": chash,
        "config": config.canonical(),
        "seeds": {
            "clustering_seed": config.clustering.seed,
            "restart_seeds": list(range(config.clustering.seed,
                                        config.clustering.seed + config.clustering.restarts)),
        },
        "inputs": inputs,
        "stages": {s: stages[s] for s in ("screen", "cluster", "infer") if s in stages},
    }
    body["content_hash"] = _sha256(_dumps(body).encode("utf-8"))
    body["timings"] = {s: timings[s] for s in body["stages"]}
    _write(path, _dumps(body))


def cmd_screen(config: RunConfig) -> list:
    """Screen every cohort and write the common retained chain."""
    t0 = time.perf_counter()
    cohorts = _load_all(config)
    out = config.out
    written = []
    retained = {}
    for name, c in cohorts.items():
        matrix, outcome = screen_panel(c.panel, config.screening, config.skip_screening)
        d = out / name
        write_screening(d, matrix, outcome, config.screening, skipped=config.skip_screening)
        written += [d / "screening_report.json", d / "correlations.csv", d / "correlations_p.csv"]
        retained[name] = outcome.retained
        for e in outcome.excluded:
            logger.info("%s: excluded %s (%s)", name, e.test.test_id, e.reason)
    chains = common_chains({n: c.panel for n, c in cohorts.items()}, retained)
    first = next(iter(chains.values()))
    doc = {
        "skip_screening": config.skip_screening,
        "chain": [t.label for t in first],
        "cohorts": {n: [t.test_id for t in ch] for n, ch in chains.items()},
    }
    _write(out / "common_tests.json", _dumps(doc))
    written.append(out / "common_tests.json")
    _record(config, "screen", written, time.perf_counter() - t0)
    return written


def cmd_cluster(config: RunConfig) -> list:
    """Cluster each cohort on the common chain and compare the cohorts."""
    t0 = time.perf_counter()
    out = config.out
    common = _read_json(out / "common_tests.json", "screen")
    cohorts = _load_all(config)
    written = []
    clusterings = {}
    for name, c in cohorts.items():
        if name not in common["cohorts"]:
            raise InputError(f"cohort {name!r} missing from common_tests.json; rerun the screen stage")
        ids = common["cohorts"][name]
        chain = _chain_from_ids(c.panel, ids)
        cl = cluster_panel(c.panel, chain, config.clustering, config.screening.score_kind, config.mode)
        clusterings[name] = cl
        d = out / name
        _write(d / "clusters.csv", clusters_csv(cl))
        _write(d / "centroids.csv", centroids_csv(cl, ids))
        _write(d / "centroid_trajectories.svg", trajectories_svg(cl, ids, config.mode))
        written += [d / "clusters.csv", d / "centroids.csv", d / "centroid_trajectories.svg"]
    cons = consistency(clusterings)
    cons["mode"] = config.mode
    _write(out / "consistency.json", _dumps(cons))
    written.append(out / "consistency.json")
    _record(config, "cluster", written, time.perf_counter() - t0)
    if config.require_consistency and cons["verdict"] != "consistent":
        raise ValidationError(f"cohort clusterings are {cons['verdict']}; see {out / 'consistency.json'}")
    return written


def read_clusters(path: Path) -> Clustering:
    """Assignment and labels from ``clusters.csv`` (centroids are not needed downstream)."""
    if not path.is_file():
        raise InputError(f"{path} not found; run the cluster stage first")
    assignment, labels = {}, {}
    with path.open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            c = int(row["cluster_index"])
            assignment[row["student_id"]] = c
            labels[c] = row["label"]
    k = max(labels) + 1 if labels else 0
    return Clustering(k=k, centroids=np.empty((k, 0)), assignment=assignment, inertia=float("nan"),
                      seed=0, iterations=0, labels=labels)


def cmd_infer(config: RunConfig) -> list:
    """Fit each requested cluster pair per cohort and intersect significant topics."""
    t0 = time.perf_counter()
    out = config.out
    common = _read_json(out / "common_tests.json", "screen")
    cohorts = _load_all(config)
    clusterings = {n: read_clusters(out / n / "clusters.csv") for n in cohorts}
    chains = {n: _chain_from_ids(c.panel, common["cohorts"][n]) for n, c in cohorts.items()}
    baselines = {n: resolve_baseline(c, chains[n], config.inference.baseline) for n, c in cohorts.items()}
    written = []
    entries = []
    for pair in config.inference.pairs:
        res = infer_pair(cohorts, clusterings, baselines, pair, config.inference)
        entry = {"pair": pair_name(pair), "positive": pair[0], "negative": pair[1], "status": res.status}
        if res.status == "skipped":
            entry["reason"] = res.reason
            logger.warning("pair %s skipped: %s", pair_name(pair), res.reason)
        else:
            entry["fits"] = {n: fit_summary(res.fits[n], res.designs[n]) for n in res.fits}
            for n, rows in res.rows.items():
                p = out / f"regression_{n}_{pair_name(pair)}.csv"
                _write(p, regression_csv(rows))
                written.append(p)
            if res.report is not None:
                entry.update(factor_report_json(res.report))
            else:
                entry["common_factors"] = []
        entries.append(entry)
    doc = {
        "alpha": config.inference.alpha,
        "baseline": {n: {"test_id": t.test_id, "test": t.label} for n, (_, t) in baselines.items()},
        "pairs": entries,
    }
    _write(out / "factors.json", _dumps(doc))
    written.append(out / "factors.json")
    _record(config, "infer", written, time.perf_counter() - t0)
    return written


def cmd_run_all(config: RunConfig) -> list:
    written = cmd_screen(config)
    written += cmd_cluster(config)
    if config.inference.pairs:
        written += cmd_infer(config)
    return written
