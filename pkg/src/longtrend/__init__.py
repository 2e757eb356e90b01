"""Screening, trajectory clustering and cross-cohort factor extraction for
longitudinal item-level achievement data."""

from .errors import (
    DegenerateInputError,
    EmptyIntersectionError,
    EmptyPanelError,
    InputError,
    InternalConsistencyError,
    ManifestMismatchError,
    NumericalError,
    ParseError,
    PipelineError,
    ScreeningError,
    SeparationError,
    SingularMatrixError,
    ValidationError,
)
from .data_model import (
    ItemRecord,
    GroundTruth,
    ScorePanel,
    TestKey,
    intersect_common_tests,
    parse_score_table,
    parse_test_manifest,
)
from .stats_core import (
    CorrResult,
    DeviationScoreSet,
    deviation_scores,
    pearson,
    spearman,
    vif,
)
from .screening import (
    ScreeningOutcome,
    ScreeningPolicy,
    TestCorrelationMatrix,
    correlation_matrix,
    screen_tests,
    validate_chain,
)
from .trend_clustering import (
    Archetype,
    Clustering,
    ConsistencyReport,
    TrendVector,
    adjusted_rand_index,
    build_trend_vectors,
    kmeans,
    kmeans_restarts,
    label_clusters,
    match_clusterings,
)
from .factor_inference import (
    DesignMatrix,
    FactorReport,
    LogisticFit,
    build_design,
    extract_common_factors,
    fit_logistic,
    reduce_variables,
    significance_tiers,
)
from .cohort_synth import SynthCohort, SynthSpec, emit_truth, generate_cohort

__version__ = "0.1.0"
