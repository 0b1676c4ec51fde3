import json
import os

import pytest
import torch
from transformers import BertConfig, BertModel, BertTokenizerFast

RECORDS = [
    {
        "id": "S1",
        "title": "therapy alpha for syndrome beta",
        "description": "alpha infusion cohort",
        "problems": ["Syndrome Beta"],
        "interventions": ["therapy alpha"],
        "outcomes": ["relief gamma"],
    },
    {
        "id": "S2",
        "title": "therapy alpha for syndrome beta",
        "description": "alpha infusion cohort",
        "problems": ["syndrome beta"],
        "interventions": ["therapy alpha"],
        "outcomes": ["relief delta"],
    },
    {
        "id": "S3",
        "title": "placebo arm",
        "description": "observation only",
        "problems": ["syndrome epsilon"],
        "interventions": ["placebo"],
        "outcomes": ["relief gamma"],
    },
]


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory):
    """A local randomly-initialized encoder so tests never touch the network."""
    directory = tmp_path_factory.mktemp("tiny-bert")
    vocab = (
        ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
        + [chr(c) for c in range(ord("a"), ord("z") + 1)]
        + ["##" + chr(c) for c in range(ord("a"), ord("z") + 1)]
        + ["therapy", "syndrome", "relief", "alpha", "beta", "gamma", "delta",
           "placebo", "infusion", "cohort", "observation", "arm", "only", "for"]
    )
    vocab_file = directory / "vocab.txt"
    vocab_file.write_text("\n".join(vocab))
    tokenizer = BertTokenizerFast(vocab_file=str(vocab_file), do_lower_case=True, model_max_length=16)
    torch.manual_seed(7)
    config = BertConfig(
        vocab_size=len(vocab),
        hidden_size=768,
        num_hidden_layers=1,
        num_attention_heads=2,
        intermediate_size=32,
        max_position_embeddings=16,
    )
    model = BertModel(config)
    model.save_pretrained(directory)
    tokenizer.save_pretrained(directory)
    return str(directory)


@pytest.fixture
def dataset(tmp_path):
    path = tmp_path / "dataset.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        for record in RECORDS:
            fh.write(json.dumps(record) + "\n")
    return str(path)
