"""Concept-direction relevance analysis: fit linear concept directions in
activation space, score directional sensitivity, and test significance."""

__version__ = "0.1.0"

from .rcvfit import ActivationSet, DegenerateRcvError, Rcv, fit_rcv, load_rcv, save_rcv
from .scoring import (ConceptScores, GradientSet, SensitivitySet, br_score,
                      normalize_br, pearson, sensitivity, tcav_score)
from .stats import (RepetitionConfig, SignificanceResult, evaluate_significance,
                    one_sample_ttest, run_repetitions, run_rerun_repetitions)
from .tensorio import (ConceptMeasures, MeasureTable, read_manifest,
                       read_measures, read_tensor, write_manifest,
                       write_measures, write_tensor)

__all__ = [
    "__version__",
    "ActivationSet", "DegenerateRcvError", "Rcv", "fit_rcv", "load_rcv",
    "save_rcv",
    "ConceptScores", "GradientSet", "SensitivitySet", "br_score",
    "normalize_br", "pearson", "sensitivity", "tcav_score",
    "RepetitionConfig", "SignificanceResult", "evaluate_significance",
    "one_sample_ttest", "run_repetitions", "run_rerun_repetitions",
    "ConceptMeasures", "MeasureTable", "read_manifest", "read_measures",
    "read_tensor", "write_manifest", "write_measures", "write_tensor",
]
