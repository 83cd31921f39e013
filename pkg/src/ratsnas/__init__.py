"""Predictor-based NAS with redirected-trail GCN predictors and FLOPs-interval sampling."""
from .benchio import SynthSpec, gen_synthetic, load_benchmark, save_benchmark
from .cells import BenchmarkEntry, CellGraph, OpVocabulary, SearchSpace, validate_cell
from .metrics import evaluate, mean_topk, samples_to_optimum, spearman
from .predictors import (
    PredictorConfig,
    PredictorKind,
    PredictorParams,
    RatsParams,
    forward,
    init_params,
    predict_all,
    rats_module,
    train_predictor,
)
from .search import OracleScorer, PredictorScorer, run_p3s, run_random_search

__version__ = "0.1.0"
