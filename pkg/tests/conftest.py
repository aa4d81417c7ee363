"""Shared fixtures. Thread pinning must precede the first numpy import."""

import os

for var in (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
):
    os.environ.setdefault(var, "1")

import json

import numpy as np
import pytest

from tagpipes import (
    encode_tfidf,
    fit_tfidf,
    make_corpus,
    make_low_label_split,
    small_demo,
    write_graph,
)
from tagpipes.datagen import cora_like


@pytest.fixture(scope="session")
def demo_graph():
    return make_corpus(small_demo(seed=1))


@pytest.fixture(scope="session")
def demo_path(tmp_path_factory, demo_graph):
    path = tmp_path_factory.mktemp("data") / "demo.json"
    write_graph(demo_graph, path, format="json")
    return str(path)


@pytest.fixture(scope="session")
def oracle_fixture(tmp_path_factory, demo_graph):
    """Mock fixture answering every classification, tape, and entity request
    for the demo corpus with ground truth."""
    from tagpipes.llm import Message, prompt_hash
    from tagpipes.prompts import (
        PromptStrategy,
        _render_class_list,
        build_prompt,
        chat_messages,
        load_catalog,
    )

    catalog = load_catalog()
    lines = []

    def add(messages, response):
        lines.append(json.dumps({"prompt_sha256": prompt_hash(messages), "response": response}))

    strategy = PromptStrategy(mode="zero_shot")
    for node in range(demo_graph.node_count):
        label = demo_graph.class_names[demo_graph.labels[node]]
        prompt = build_prompt(demo_graph, node, strategy)
        add(chat_messages(prompt), f"['{label}']")

        tape_content = catalog["tape_request"].format(
            class_list=_render_class_list(demo_graph.class_names, "raw_identifier"),
            node_text=demo_graph.texts[node],
        )
        add(
            (Message("system", catalog["system"]), Message("user", tape_content)),
            f"['{label}'] The document plainly discusses {label.lower()};"
            " its terminology is characteristic of that area.",
        )

        kea_content = catalog["kea_request"].format(node_text=demo_graph.texts[node])
        add(
            (Message("system", catalog["system"]), Message("user", kea_content)),
            json.dumps([{"term": f"topic {label}", "description": "recurring subject"}]),
        )

    path = tmp_path_factory.mktemp("fixtures") / "oracle.jsonl"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(path)


@pytest.fixture(scope="session")
def demo_features(demo_graph):
    return encode_tfidf(fit_tfidf(demo_graph.texts, max_dim=256), demo_graph.texts)


@pytest.fixture(scope="session")
def demo_split(demo_graph):
    return make_low_label_split(demo_graph, seed=0, val_size=30, test_size=30)


@pytest.fixture(scope="session")
def tiny_graph():
    # 60 nodes: small enough for finite-difference sweeps
    return make_corpus(small_demo(seed=2, node_count=60))


@pytest.fixture(scope="session")
def tiny_features(tiny_graph):
    return encode_tfidf(fit_tfidf(tiny_graph.texts, max_dim=64), tiny_graph.texts)


@pytest.fixture(scope="session")
def tiny_split(tiny_graph):
    return make_low_label_split(tiny_graph, seed=0, train_per_class=5, val_size=15, test_size=15)


@pytest.fixture(scope="session")
def cora_graph():
    return make_corpus(cora_like(seed=0))


@pytest.fixture(scope="session")
def cora_features(cora_graph):
    return encode_tfidf(fit_tfidf(cora_graph.texts, max_dim=1024), cora_graph.texts)
