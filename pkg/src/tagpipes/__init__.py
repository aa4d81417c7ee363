"""Node classification pipelines for text-attributed graphs.

Two complementary routes over the same graph data: encode node text into
features and train a from-scratch network on them, or prompt a language
model directly and parse its answers. Shared infrastructure covers dataset
IO, deterministic splits, a caching LLM gateway, and a seeded experiment
harness.
"""

from .graph import (
    DataSplit,
    EgoSample,
    TextAttributedGraph,
    build_graph,
    load_graph,
    make_high_label_split,
    make_low_label_split,
    sample_ego,
    write_graph,
)
from .encoders import (
    FeatureMatrix,
    TfidfModel,
    concat_features,
    encode_external,
    encode_hash,
    encode_tfidf,
    fit_tfidf,
)
from .gnn import (
    ModelConfig,
    TrainConfig,
    TrainedModel,
    evaluate,
    forward,
    gradient_check,
    load_model,
    save_model,
    train,
)
from .llm import (
    Gateway,
    LlmExchange,
    LlmRequest,
    Message,
    MockChatProvider,
    RateLimiter,
    ResponseCache,
    mock_from_fixture,
    prompt_hash,
    request_key,
)
from .prompts import (
    ParsedPrediction,
    PromptStrategy,
    build_prompt,
    classify_nodes,
    parse_prediction,
    summarize_neighbors,
)
from .enhance import (
    Augmentation,
    ensemble_predict,
    generate_kea,
    generate_tape,
    kea_inject,
    pseudo_label_features,
)
from .annotate import (
    AnnotationRun,
    annotate_and_distill,
    default_budget,
    distill_from_outcomes,
    probe_confidence,
    select_nodes,
)
from .datagen import CorpusSpec, cora_like, make_corpus, pubmed_like, small_demo
from .harness import ExperimentReport, ExperimentSpec, render_report, run
from .rng import derive_seed, generator

__version__ = "0.1.0"
