import os

import numpy as np
import pytest
import torch
from transformers import BertConfig, BertModel, BertTokenizer

KITCHEN = ("blender knife dough oven pan whisk spatula burner lid handle "
           "grip steel rust dishwasher crumbs toast sharp dull batter").split()
BOOKS = ("novel plot chapter author prose pacing narrator ending twist "
         "character dialogue paperback cover print font margins sequel story").split()
SENTIMENT = ["good", "bad", "great", "terrible", "love", "hate", "fine", "poor"]
FILLER = "the a is was very and it this really quite".split()


def build_local_encoder(directory, hidden=32, layers=2, heads=2, seed=0):
    """Randomly initialized BERT-style encoder saved to a local directory."""
    words = sorted(set(KITCHEN + BOOKS + SENTIMENT + FILLER))
    vocab = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"] + words
    directory = str(directory)
    os.makedirs(directory, exist_ok=True)
    vocab_path = os.path.join(directory, "vocab.txt")
    with open(vocab_path, "w") as fh:
        fh.write("\n".join(vocab))
    tokenizer = BertTokenizer(vocab_path)
    config = BertConfig(vocab_size=len(vocab), hidden_size=hidden,
                        num_hidden_layers=layers, num_attention_heads=heads,
                        intermediate_size=hidden * 2, max_position_embeddings=160)
    torch.manual_seed(seed)
    model = BertModel(config)
    model.save_pretrained(directory)
    tokenizer.save_pretrained(directory)
    return directory


def make_review_corpus(pool, n, seed):
    """Deterministic synthetic review lines over a domain word pool."""
    rng = np.random.Generator(np.random.PCG64(seed))
    lines, labels = [], []
    for i in range(n):
        k = int(rng.integers(8, 15))
        words = [pool[int(rng.integers(0, len(pool)))] if rng.random() < 0.7
                 else FILLER[int(rng.integers(0, len(FILLER)))] for _ in range(k)]
        words.insert(int(rng.integers(0, len(words))),
                     SENTIMENT[int(rng.integers(0, len(SENTIMENT)))])
        lines.append(" ".join(words))
        labels.append(i % 2)
    return lines, labels


def write_corpus(tmp_path, name, lines, labels):
    input_path = tmp_path / f"{name}.txt"
    labels_path = tmp_path / f"{name}.labels"
    input_path.write_text("\n".join(lines))
    labels_path.write_text("\n".join(str(l) for l in labels))
    return input_path, labels_path


@pytest.fixture(scope="session")
def tiny_encoder(tmp_path_factory):
    return build_local_encoder(tmp_path_factory.mktemp("enc32"), hidden=32)


@pytest.fixture(scope="session")
def base_size_encoder(tmp_path_factory):
    # base-size hidden width (768); shallow depth keeps the test fast
    return build_local_encoder(tmp_path_factory.mktemp("enc768"),
                               hidden=768, layers=2, heads=8)
