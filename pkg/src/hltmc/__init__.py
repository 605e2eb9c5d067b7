"""Hierarchical latent tree models over word relative frequencies.

Library surface: model types and validation (:mod:`hltmc.model`),
document generation (:mod:`hltmc.sampling`), exact tree inference
(:mod:`hltmc.inference`), EM and stepwise EM fitting
(:mod:`hltmc.learning`), held-out likelihood estimation
(:mod:`hltmc.evaluation`), topic extraction and quality metrics
(:mod:`hltmc.topics`), structure building and import
(:mod:`hltmc.structure`), and corpus handling (:mod:`hltmc.corpus`).
The ``hltmc`` console script exposes the same pipeline.
"""

__version__ = "0.1.0"

from .corpus import (
    CountCorpus,
    SparseDoc,
    Vocabulary,
    load_docword,
    load_uci_bow,
    load_vocab,
    save_uci_bow,
    save_vocab,
    select_vocab_tfidf,
    split_corpus,
)
from .errors import DataError, DegeneracyError, HltmcError
from .evaluation import (
    EvalConfig,
    HeldoutReport,
    heldout_report,
    importance_sampling_loglik,
    multinomial_log_prob,
    naive_mc_loglik,
)
from .inference import (
    BatchPosteriors,
    PosteriorMarginals,
    brute_force_loglik,
    level1_joint_prob,
    loglik_doc,
    loglik_docs,
    posteriors,
    posteriors_batch,
    prior_marginals,
)
from .learning import (
    FitConfig,
    FitResult,
    RelFreqData,
    SufficientStats,
    counts_to_relfreq,
    e_step,
    em_fit,
    m_step,
    random_init,
    relabel_states,
    stepwise_em_fit,
)
from .model import (
    DEFAULT_SIGMA_FLOOR,
    HltmcModel,
    Node,
    ParamSet,
    TreeStructure,
    ValidationReport,
    count_parameters,
    load_model,
    save_model,
    validate_model,
)
from .sampling import (
    GeneratedDoc,
    generate_corpus,
    generate_document,
    generate_urf,
    normalize_urf,
    sample_latents,
    sample_truncated_normal,
)
from .structure import (
    BinaryCorpus,
    binarize,
    build_structure,
    load_structure,
    pairwise_mi,
    save_structure,
)
from .topics import (
    Topic,
    TopicTree,
    TopicWord,
    coherence,
    compactness,
    extract_hierarchy,
    extract_topic,
    score_report,
)
