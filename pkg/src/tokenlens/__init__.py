"""Tokenizer engineering toolkit.

Four instruments around subword tokenizers: training (byte-pair,
likelihood-scored merging, unigram-LM pruning), vocabulary comparison,
per-language token-premium measurement over parallel corpora, and input-
embedding derivation for characters the tokenizer splits into pieces.
"""

from .analysis import (
    DEFAULT_RULES,
    ComparisonMatrix,
    NormalizationRules,
    NormalizeResult,
    VocabBreakdownRow,
    comparison_matrix,
    containment,
    jaccard,
    normalize_vocab,
    vocab_breakdown,
)
from .embedding import (
    AugmentationPlan,
    DerivationStrategy,
    LayerEncoder,
    LookupEncoder,
    PlanEntry,
    ToyEncoder,
    augment,
    build_reference,
    corpus_similarity,
    derive_knn,
    derive_linreg,
    derive_local_linreg,
    encode_augmented,
    eval_similarity,
    fraction_new_tokens,
    load_plan,
    pooled_hidden,
    read_matrix,
    save_plan,
    select_oov_chars,
    toy_encoder,
    write_matrix,
)
from .errors import (
    CorpusDecodeError,
    LineCountMismatchError,
    OovCharacterError,
    ToolkitError,
    UnsegmentableError,
)
from .premium import (
    PremiumMatrix,
    PremiumReport,
    TokenizerHandle,
    bpe_tokenizer,
    premium,
    premium_matrix,
    sentence_ratio,
    ulm_tokenizer,
    write_premium_csv,
    write_premium_json,
)
from .text import (
    UNICODE_VERSION,
    Corpus,
    ParallelCorpus,
    char_byte_len,
    load_corpus,
    load_parallel_corpus,
    recover_utf8_chars,
    unicode_block,
)
from .training import (
    UnigramVocab,
    bpe_encode,
    bpe_train,
    count_adjacent_pairs,
    ulm_prune,
    ulm_seed,
    ulm_viterbi_segment,
    unigram_log_likelihood,
    wordpiece_merge_score,
    wordpiece_train,
)
from .vocab import (
    MergeRule,
    MergeRuleList,
    Vocabulary,
    load_merges,
    load_vocab,
    save_merges,
    save_vocab,
)

__version__ = "0.1.0"
