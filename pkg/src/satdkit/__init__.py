"""satdkit: multitask CNN identification of self-admitted technical debt
across code comments, commit messages, pull requests, and issues, with
keyword backtracking, cross-source linking, and reference baselines."""

__version__ = "0.1.0"

from .corpus import (
    DatasetError,
    DebtLabel,
    FoldAssignment,
    LabeledCorpus,
    Record,
    RefSet,
    SourceKind,
    load_jsonl,
    normalize,
    strip_code_blocks,
    stratified_split,
    tokenize,
)
from .embedding import EmbeddingMatrix, Vocab, build_vocab, encode, load_vec_file, random_init
from .model import (
    ModelBundle,
    ModelConfig,
    ModelParams,
    backward,
    forward,
    load_checkpoint,
    predict,
    save_checkpoint,
    step,
    weighted_loss,
)
from .train_eval import (
    CVReport,
    Metrics,
    StatResult,
    TrainConfig,
    class_weights,
    cohen_kappa,
    compare,
    cross_validate,
    evaluate,
    train_multitask,
)
from .keywords import (
    KeywordEntry,
    KeywordReport,
    backtrack,
    extract_keywords,
    feature_contributions,
    shared_keyword_matrix,
)
from .linker import (
    ContributionFlow,
    RefPattern,
    SimilarityPair,
    bow_vector,
    build_flows,
    cosine,
    extract_refs,
    find_related,
    load_stop_words,
)
from .baselines import (
    LogRegModel,
    TfidfModel,
    logreg_predict,
    logreg_train,
    random_classifier,
    tfidf_fit,
    tfidf_transform,
)
