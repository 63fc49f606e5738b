"""Shared fixtures, vocabulary builders, and the acceptance-verdict report."""

import pytest

from tokmap.wordizer import CONTINUATION, WORD_START, MarkerStyle, MergeRules, Vocab

# One line per acceptance criterion, printed after the run regardless of
# output capturing (tests append via test_acceptance.criterion).
ACCEPTANCE_VERDICTS = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_VERDICTS:
            terminalreporter.write_line(line)

SPECIALS = ("<unk>", "<s>", "</s>")


def word_start_vocab(tokens, marker="_", specials=SPECIALS, ideographic=False):
    surfaces = list(specials) + [t for t in tokens if t not in specials]
    return Vocab(
        surfaces,
        MarkerStyle(WORD_START, marker),
        frozenset(range(len(specials))),
        ideographic,
    )


def continuation_vocab(tokens, marker="##", specials=SPECIALS, ideographic=False):
    surfaces = list(specials) + [t for t in tokens if t not in specials]
    return Vocab(
        surfaces,
        MarkerStyle(CONTINUATION, marker),
        frozenset(range(len(specials))),
        ideographic,
    )


@pytest.fixture
def dutch_target_vocab():
    """Target side of the worked example: single mapped token plus specials."""
    return word_start_vocab(["_vijftien", "_Mischien", "?", "!", "."])


@pytest.fixture
def english_source_vocab():
    """Source side of the worked example."""
    return word_start_vocab(["_fifteen", "_15", "_Fif", "teen", "_maybe", "?", "!", "."])


def ids(vocab, *surfaces):
    out = []
    for s in surfaces:
        tid = vocab.id_of(s)
        assert tid is not None, f"{s!r} not in test vocab"
        out.append(tid)
    return out
