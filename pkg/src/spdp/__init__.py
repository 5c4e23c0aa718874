"""Shadow Poisson-Dirichlet process topic model with a parallel Gibbs sampler."""

from .corpus import Corpus, FlatCorpus, Group, HoldoutSplit, corpus_from_texts, duplicate_training, load_corpus, split_holdout, tokenize
from .errors import (
    CacheOverflowError,
    DataError,
    DegenerateDistributionError,
    IntegrityError,
    SPDPError,
    UnsupportedConfigurationError,
    UsageError,
)
from .evaluation import align_and_heatmap, hellinger, held_out_perplexity, perplexity, top_words, topic_table
from .model import (
    Choice,
    CountState,
    Hyperparameters,
    ModelEstimate,
    TransformMatrix,
    add_word,
    compute_proposals,
    estimate,
    gibbs_sweep,
    init_state,
    joint_log_prob,
    remove_word,
)
from .numerics import RngStream, StirlingCache, pochhammer_log, sample_categorical, stirling_log
from .parallel import ParallelSampler, error_correct, reorder_words

__version__ = "0.1.0"
