"""Compositional caption construction toolkit.

Mines noun-phrase and connecting-phrase inventories from a parsed caption
corpus, trains the three scoring modules (noun-phrase, connecting,
completeness), and assembles captions bottom-up by recursively connecting
phrases from a pool, with greedy, beam and sampling search plus diversity
evaluation.
"""

from .composer import (
    CompositionResult,
    Leaf,
    Node,
    ScoredPhrase,
    SearchConfig,
    UserControl,
    apply_user_control,
    brute_force_oracle,
    compose,
    compose_beam,
    compose_sample,
    step_greedy,
)
from .completeness import CompletenessClassifier
from .connecting import ConnectingClassifier
from .corpus import (
    CompletenessExample,
    CompositionTriple,
    ConnectingInventory,
    MiningStats,
    NounPhraseInventory,
    ParsedCaption,
    Vocabulary,
    build_connecting_inventory,
    build_np_inventory,
    build_vocabulary,
    derive_composition_plan,
    emit_training_examples,
    extract_noun_phrase_spans,
    load_corpus,
)
from .encoder import (
    EncoderParams,
    ImageContext,
    MeanEncoderParams,
    encode_mean,
    encode_two_level,
    init_encoder_params,
    init_mean_encoder_params,
)
from .metrics import (
    DiversityReport,
    diversity_dataset,
    diversity_image,
    diversity_report,
    novel_ratio,
    token_edit_distance,
    unique_ratio,
    vocabulary_usage,
)
from .nounphrases import (
    NounPhraseClassifier,
    ScoredNounPhrase,
    SynonymLexicon,
    central_noun,
    select_top_n,
    semantic_nms,
    semantic_nms_clusters,
)

__version__ = "0.1.0"

__all__ = [
    "CompletenessClassifier",
    "CompletenessExample",
    "CompositionResult",
    "CompositionTriple",
    "ConnectingClassifier",
    "ConnectingInventory",
    "DiversityReport",
    "EncoderParams",
    "ImageContext",
    "Leaf",
    "MeanEncoderParams",
    "MiningStats",
    "Node",
    "NounPhraseClassifier",
    "NounPhraseInventory",
    "ParsedCaption",
    "ScoredNounPhrase",
    "ScoredPhrase",
    "SearchConfig",
    "SynonymLexicon",
    "UserControl",
    "Vocabulary",
    "apply_user_control",
    "brute_force_oracle",
    "build_connecting_inventory",
    "build_np_inventory",
    "build_vocabulary",
    "central_noun",
    "compose",
    "compose_beam",
    "compose_sample",
    "derive_composition_plan",
    "diversity_dataset",
    "diversity_image",
    "diversity_report",
    "emit_training_examples",
    "encode_mean",
    "encode_two_level",
    "extract_noun_phrase_spans",
    "init_encoder_params",
    "init_mean_encoder_params",
    "load_corpus",
    "novel_ratio",
    "select_top_n",
    "semantic_nms",
    "semantic_nms_clusters",
    "step_greedy",
    "token_edit_distance",
    "unique_ratio",
    "vocabulary_usage",
]
