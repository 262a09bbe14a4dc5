"""Perron-eigenvector gossip and its ranking and PCA applications."""
from .pca import PcaRun, PcaStream, angle_to_q, pca_block_step, pca_sa_step, run_pca_block, run_pca_sa
from .pf import (
    PfGossip,
    QDecomposition,
    RatioBounds,
    decompose,
    likelihood_ratios,
    pf_alt_normalization_step,
    pf_async_step,
    pf_gossip_step,
    pf_mixed_sampling_step,
    random_nonnegative_matrix,
)
from .ranking import (
    HitsGossip,
    PageRankGossip,
    PushGossip,
    ReputationGossip,
    cycle_neighborhoods,
    gibbs_distribution,
    gibbs_matrix,
    google_transpose,
    hits_step,
    pagerank_dense,
    pagerank_step,
    push_step,
    rating_spread,
    reputation_step,
)
