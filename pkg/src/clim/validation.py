"""Input checks shared by the estimator and the command line."""

from __future__ import annotations

from typing import Sequence

from clim.data import Example
from clim.exceptions import DataError


def check_utterances(X, name: str = "X") -> list[list[str]]:
    """Normalise ``X`` to a list of token lists.

    Each utterance may be a whitespace-separated string or a sequence of
    string tokens.  Empty utterances are rejected.
    """
    if isinstance(X, str):
        raise DataError(f"{name} must be a sequence of utterances, not a single string")
    try:
        items = list(X)
    except TypeError:
        raise DataError(f"{name} must be iterable, got {type(X).__name__}") from None
    if not items:
        raise DataError(f"{name} is empty")
    out = []
    for i, utt in enumerate(items):
        tokens = utt.split() if isinstance(utt, str) else list(utt)
        if not tokens:
            raise DataError(f"{name}[{i}] has no tokens")
        for tok in tokens:
            if not isinstance(tok, str) or not tok or any(c.isspace() for c in tok):
                raise DataError(f"{name}[{i}] contains an invalid token {tok!r}")
        out.append(tokens)
    return out


def check_targets(y, X: Sequence[Sequence[str]], name: str = "y") -> tuple[list[list[str]], list[str]]:
    """Split ``y`` (``(slot_tags, intent)`` pairs) into tag lists and intents aligned with ``X``."""
    try:
        pairs = list(y)
    except TypeError:
        raise DataError(f"{name} must be iterable, got {type(y).__name__}") from None
    if len(pairs) != len(X):
        raise DataError(f"{name} has {len(pairs)} entries for {len(X)} utterances")
    tags, intents = [], []
    for i, (pair, tokens) in enumerate(zip(pairs, X)):
        try:
            t, intent = pair
        except (TypeError, ValueError):
            raise DataError(f"{name}[{i}] must be a (slot_tags, intent) pair") from None
        t = t.split() if isinstance(t, str) else list(t)
        if len(t) != len(tokens):
            raise DataError(f"{name}[{i}] has {len(t)} tags for {len(tokens)} tokens")
        if not isinstance(intent, str) or not intent:
            raise DataError(f"{name}[{i}] intent must be a non-empty string")
        tags.append(t)
        intents.append(intent)
    return tags, intents


def to_examples(X, y, name: str = "X") -> list[Example]:
    tokens = check_utterances(X, name)
    tags, intents = check_targets(y, tokens, "y" if name == "X" else f"y for {name}")
    return [Example(t, s, i) for t, s, i in zip(tokens, tags, intents)]
