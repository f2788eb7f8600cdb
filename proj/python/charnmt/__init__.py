from ._core import (
    AlignmentError,
    ConfigError,
    ConsistencyError,
    ContractError,
    CorpusAlignmentError,
    DimensionError,
    DomainError,
    EnsembleError,
    Error,
    IntegrityError,
    MergeTable,
    NonFiniteError,
    PathError,
    Translator,
    Unit,
    UsageError,
    Vocabulary,
    VocabularyError,
    __version__,
    bleu,
    build_vocab,
    checkpoint_precision,
    learn_bpe,
    train,
)
