"""Coarse versus fine label training on a sparse-coding data model."""

from ._lgsim import (
    ConfigError,
    ContractError,
    Dictionary,
    MissingArtifactError,
    Network,
    RetriableError,
    Sample,
    Taxonomy,
    TrainingDiverged,
    assign_fine_ids,
    build_dictionary,
    desk_params,
    emit_report,
    fit_log_growth,
    forward,
    grad_check,
    hard_example_audit,
    init_geometry,
    init_network,
    kmeans,
    lemma_monte_carlo,
    make_batch,
    make_eval_set,
    orthonormality_error,
    paper_asymptotic_params,
    rebalance_granularity,
    run_experiment,
    sgd_step,
    softmax_logits,
    train,
)

__all__ = [name for name in dir() if not name.startswith("_")]
