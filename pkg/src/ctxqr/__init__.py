"""Context-aware QR payloads: Wi-Fi fingerprints, stored scan context and proximity rules."""

from .errors import CtxQrError
from .fingerprint import (
    ApObservation,
    Fingerprint,
    KnnConfig,
    PositionEstimate,
    RadioMapEntry,
    RankVector,
    euclidean_distance,
    knn_locate,
    normalize_fingerprint,
    rank_transform,
    rank_values,
    spearman_correlation,
    visibility_overlap,
)
from .qr import (
    ContextParams,
    RewriteConfig,
    classify_payload,
    parse_context_params,
    pseudonymize_mac,
    rewrite_url_inline,
    rewrite_url_stored,
)
from .rules import EvalContext, Rule, evaluate_all, evaluate_condition, parse_rules
from .store import ScanEvent, ScanStore, TimeInterval

__version__ = "0.1.0"

__all__ = [
    "ApObservation",
    "ContextParams",
    "CtxQrError",
    "EvalContext",
    "Fingerprint",
    "KnnConfig",
    "PositionEstimate",
    "RadioMapEntry",
    "RankVector",
    "RewriteConfig",
    "Rule",
    "ScanEvent",
    "ScanStore",
    "TimeInterval",
    "classify_payload",
    "euclidean_distance",
    "evaluate_all",
    "evaluate_condition",
    "knn_locate",
    "normalize_fingerprint",
    "parse_context_params",
    "parse_rules",
    "pseudonymize_mac",
    "rank_transform",
    "rank_values",
    "rewrite_url_inline",
    "rewrite_url_stored",
    "spearman_correlation",
    "visibility_overlap",
]
