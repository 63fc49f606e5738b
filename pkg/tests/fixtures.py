"""Builders for the two engineered pipeline fixtures.

golden: a pretokenized corpus whose alignment counts reproduce the worked
example exactly (13721 / 12293 / 544).

identity: a copy-corpus (same text on both sides, same tokenizer) whose
mapping must be the identity, so remapped embeddings equal the source table.
"""

import json

import numpy as np

from tokmap.tensors import EmbeddingTable, write_tensor
from tokmap.wordizer import WORD_START, MarkerStyle, MergeRules, Vocab, bpe_encode, bpe_train

GOLDEN_COUNTS = (13721, 12293, 544)


def build_golden_fixture(root, counts=GOLDEN_COUNTS):
    """Write corpus/vocabs/config under root; returns the config path."""
    root.mkdir(parents=True, exist_ok=True)
    specials = ["<unk>", "<s>", "</s>"]
    source_vocab = Vocab(
        specials + ["_fifteen", "_15", "_Fif", "teen"],
        MarkerStyle(WORD_START, "_"), frozenset(range(3)))
    target_vocab = Vocab(
        specials + ["_vijftien"],
        MarkerStyle(WORD_START, "_"), frozenset(range(3)))
    source_vocab.save(root / "source_vocab.json")
    target_vocab.save(root / "target_vocab.json")

    n_fifteen, n_15, n_fif_teen = counts
    with open(root / "corpus.txt", "w", encoding="utf-8") as fh:
        for _ in range(n_fifteen):
            fh.write("_fifteen ||| _vijftien\n")
        for _ in range(n_15):
            fh.write("_15 ||| _vijftien\n")
        for _ in range(n_fif_teen):
            fh.write("_Fif teen ||| _vijftien\n")

    config = {
        "corpus": [str(root / "corpus.txt")],
        "source_vocab": str(root / "source_vocab.json"),
        "target_vocab": str(root / "target_vocab.json"),
        "pretokenized": True,
        "out_dir": str(root / "out"),
        "min_count": 10,
    }
    config_path = root / "config.json"
    config_path.write_text(json.dumps(config, indent=1), encoding="utf-8")
    return config_path, source_vocab, target_vocab


IDENTITY_SENTENCES = [
    "the cat sat on the mat",
    "a dog ran over the hill",
    "birds sing in tall trees",
    "rivers flow toward the sea",
    "children play near old houses",
    "bread and cheese for lunch",
    "the moon rose above clouds",
    "cold wind moved the leaves",
    "seven ships left the harbor",
    "music filled the quiet room",
    "stones lined the narrow path",
    "rain fell on warm fields",
    "the baker sells fresh bread",
    "lamps glow inside small shops",
    "horses graze beside the fence",
    "letters arrived from distant friends",
    "the clock struck twelve times",
    "smoke curled from the chimney",
    "apples ripen in late summer",
    "the teacher reads long stories",
]


def build_identity_fixture(root, repeats=25, hidden_dim=16, seed=123):
    """Copy-corpus fixture: same tokenizer and text on both sides."""
    root.mkdir(parents=True, exist_ok=True)
    vocab, merges = bpe_train(
        IDENTITY_SENTENCES * 2, vocab_size=400, marker_style=MarkerStyle(WORD_START, "_"))
    vocab.save(root / "vocab.json")
    merges.save(root / "merges.txt")

    # precondition of the fixture: every corpus word encodes to one token
    for sentence in IDENTITY_SENTENCES:
        for word in sentence.split():
            assert len(bpe_encode(word, vocab, merges)) == 1, word

    with open(root / "corpus.txt", "w", encoding="utf-8") as fh:
        for _ in range(repeats):
            for sentence in IDENTITY_SENTENCES:
                fh.write(f"{sentence} ||| {sentence}\n")

    rng = np.random.default_rng(seed)
    embeddings = EmbeddingTable(
        rng.standard_normal((len(vocab), hidden_dim)).astype(np.float32),
        "F32", "embeddings")
    write_tensor(root / "embeddings.tensors", [embeddings])

    config = {
        "corpus": [str(root / "corpus.txt")],
        "source_vocab": str(root / "vocab.json"),
        "target_vocab": str(root / "vocab.json"),
        "source_merges": str(root / "merges.txt"),
        "target_merges": str(root / "merges.txt"),
        "out_dir": str(root / "out"),
        "min_count": 10,
        "source_embeddings": str(root / "embeddings.tensors"),
        "embeddings_name": "embeddings",
    }
    config_path = root / "config.json"
    config_path.write_text(json.dumps(config, indent=1), encoding="utf-8")
    return config_path, vocab, merges, embeddings
