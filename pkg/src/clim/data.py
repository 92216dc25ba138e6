"""Loading the three-file split layout, vocabularies and padded batches.

A split directory holds three line-aligned UTF-8 files::

    seq.in    space-separated tokens
    seq.out   space-separated BIO slot tags, one per token
    label     one intent label per line
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from clim.exceptions import ContractError, DataError

logger = logging.getLogger(__name__)

PAD = "<pad>"
UNK = "<unk>"
SPLIT_FILES = ("seq.in", "seq.out", "label")


@dataclass
class Example:
    tokens: list[str]
    slot_labels: list[str]
    intent: str

    def __post_init__(self):
        if not self.tokens:
            raise DataError("an example needs at least one token")
        if len(self.tokens) != len(self.slot_labels):
            raise DataError(f"{len(self.tokens)} tokens but {len(self.slot_labels)} slot labels")


class Vocab:
    """Dense string/id map.  Word and slot vocabularies reserve id 0 for padding;
    only the word vocabulary has an unknown entry (id 1)."""

    def __init__(self, kind: str, items: Iterable[str] = ()):
        if kind not in ("word", "slot", "intent"):
            raise ContractError(f"unknown vocabulary kind {kind!r}")
        self.kind = kind
        self.itos: list[str] = []
        self.stoi: dict[str, int] = {}
        if kind in ("word", "slot"):
            self.add(PAD)
        if kind == "word":
            self.add(UNK)
        for item in items:
            self.add(item)

    @property
    def reserved(self) -> int:
        return {"word": 2, "slot": 1, "intent": 0}[self.kind]

    def add(self, item: str) -> int:
        if item not in self.stoi:
            self.stoi[item] = len(self.itos)
            self.itos.append(item)
        return self.stoi[item]

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, item: str) -> bool:
        return item in self.stoi

    def content_size(self) -> int:
        """Number of entries excluding reserved ones."""
        return len(self) - self.reserved

    def id(self, item: str) -> int:
        idx = self.stoi.get(item)
        if idx is None:
            if self.kind == "word":
                return self.stoi[UNK]
            raise KeyError(item)
        return idx

    def token(self, idx: int) -> str:
        return self.itos[idx]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "items": self.itos[self.reserved:]}

    @classmethod
    def from_dict(cls, data: dict) -> "Vocab":
        return cls(data["kind"], data["items"])

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.kind == other.kind and self.itos == other.itos

    def __repr__(self) -> str:
        return f"Vocab(kind={self.kind!r}, size={len(self)})"


@dataclass
class Vocabs:
    word: Vocab
    slot: Vocab
    intent: Vocab

    def to_dict(self) -> dict:
        return {"word": self.word.to_dict(), "slot": self.slot.to_dict(), "intent": self.intent.to_dict()}

    @classmethod
    def from_dict(cls, data: dict) -> "Vocabs":
        return cls(*(Vocab.from_dict(data[k]) for k in ("word", "slot", "intent")))


@dataclass
class Batch:
    token_ids: np.ndarray   # [B, T_max] int
    slot_ids: np.ndarray    # [B, T_max] int, 0 on padding
    intent_ids: np.ndarray  # [B] int, -1 for intents unseen in training
    mask: np.ndarray        # [B, T_max] float 0/1
    lengths: np.ndarray     # [B] int
    examples: list[Example] = field(default_factory=list, repr=False)

    def __len__(self) -> int:
        return len(self.lengths)


def _read_lines(path: Path) -> list[str]:
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"missing split file {path}") from None
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def load_split(data_dir, split_name: str) -> list[Example]:
    """Read ``<data_dir>/<split_name>/{seq.in, seq.out, label}``."""
    root = Path(data_dir) / split_name
    if not root.is_dir():
        raise DataError(f"split directory {root} does not exist")
    tokens_f, tags_f, labels_f = (root / name for name in SPLIT_FILES)
    seqs, tags, labels = _read_lines(tokens_f), _read_lines(tags_f), _read_lines(labels_f)
    if not (len(seqs) == len(tags) == len(labels)):
        raise DataError(f"{root}: line counts differ: seq.in={len(seqs)} seq.out={len(tags)} "
                        f"label={len(labels)}")
    if not seqs:
        raise DataError(f"{root}: split is empty")
    examples = []
    for lineno, (s, t, lab) in enumerate(zip(seqs, tags, labels), start=1):
        toks, tgs = s.split(), t.split()
        if not toks:
            raise DataError(f"{tokens_f}:{lineno}: empty utterance")
        if len(toks) != len(tgs):
            raise DataError(f"{tags_f}:{lineno}: {len(toks)} tokens but {len(tgs)} tags")
        if not lab.strip():
            raise DataError(f"{labels_f}:{lineno}: empty intent label")
        examples.append(Example(toks, tgs, lab.strip()))
    return examples


def write_split(examples: Sequence[Example], data_dir, split_name: str) -> Path:
    root = Path(data_dir) / split_name
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "seq.in", "w", encoding="utf-8", newline="\n") as f_in, \
            open(root / "seq.out", "w", encoding="utf-8", newline="\n") as f_out, \
            open(root / "label", "w", encoding="utf-8", newline="\n") as f_lab:
        for ex in examples:
            f_in.write(" ".join(ex.tokens) + "\n")
            f_out.write(" ".join(ex.slot_labels) + "\n")
            f_lab.write(ex.intent + "\n")
    return root


def read_conll(path) -> list[Example]:
    """Two-column CoNLL (``token tag``) with a ``# intent <label>`` line per block."""
    examples, tokens, tags, intent = [], [], [], None
    path = Path(path)

    def flush(lineno):
        nonlocal tokens, tags, intent
        if tokens:
            if intent is None:
                raise DataError(f"{path}:{lineno}: sentence without '# intent' line")
            examples.append(Example(tokens, tags, intent))
        elif intent is not None:
            raise DataError(f"{path}:{lineno}: intent line without tokens")
        tokens, tags, intent = [], [], None

    lines = path.read_text(encoding="utf-8").splitlines()
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped:
            flush(lineno)
        elif stripped.startswith("#"):
            parts = stripped[1:].split()
            if len(parts) == 2 and parts[0] == "intent":
                intent = parts[1]
        else:
            cols = stripped.split()
            if len(cols) < 2:
                raise DataError(f"{path}:{lineno}: expected 'token tag', got {line!r}")
            tokens.append(cols[0])
            tags.append(cols[-1])
    flush(len(lines) + 1)
    return examples


def convert_conll(path, data_dir, split_name: str) -> Path:
    return write_split(read_conll(path), data_dir, split_name)


def build_vocabs(train_examples: Sequence[Example]) -> Vocabs:
    """Vocabularies in first-occurrence order, from the training split only."""
    if not train_examples:
        raise ContractError("cannot build vocabularies from an empty training set")
    word, slot, intent = Vocab("word"), Vocab("slot"), Vocab("intent")
    for ex in train_examples:
        for tok in ex.tokens:
            word.add(tok)
        for tag in ex.slot_labels:
            slot.add(tag)
        intent.add(ex.intent)
    return Vocabs(word, slot, intent)


def unknown_labels(examples: Sequence[Example], vocabs: Vocabs) -> dict[str, set[str]]:
    """Slot tags and intents in ``examples`` that the training vocabularies lack."""
    slots = {t for ex in examples for t in ex.slot_labels if t not in vocabs.slot}
    intents = {ex.intent for ex in examples if ex.intent not in vocabs.intent}
    return {"slot": slots, "intent": intents}


def encode_example(ex: Example, vocabs: Vocabs, strict: bool = False):
    """Token, slot and intent ids.  Unseen slot tags map to ``O`` and unseen intents to -1;
    ``strict`` raises instead."""
    token_ids = [vocabs.word.id(t) for t in ex.tokens]
    slot_ids = []
    for pos, tag in enumerate(ex.slot_labels):
        if tag in vocabs.slot:
            slot_ids.append(vocabs.slot.id(tag))
        elif strict:
            raise DataError(f"slot tag {tag!r} at position {pos} not in the training vocabulary")
        else:
            slot_ids.append(vocabs.slot.stoi.get("O", 0))
    if ex.intent in vocabs.intent:
        intent_id = vocabs.intent.id(ex.intent)
    elif strict:
        raise DataError(f"intent {ex.intent!r} not in the training vocabulary")
    else:
        intent_id = -1
    return token_ids, slot_ids, intent_id


def collate(examples: Sequence[Example], vocabs: Vocabs) -> Batch:
    lengths = np.array([len(ex.tokens) for ex in examples], dtype=np.int64)
    B, T = len(examples), int(lengths.max())
    token_ids = np.zeros((B, T), dtype=np.int64)
    slot_ids = np.zeros((B, T), dtype=np.int64)
    intent_ids = np.zeros(B, dtype=np.int64)
    mask = np.zeros((B, T))
    for i, ex in enumerate(examples):
        tok, sl, it = encode_example(ex, vocabs)
        n = len(tok)
        token_ids[i, :n] = tok
        slot_ids[i, :n] = sl
        intent_ids[i] = it
        mask[i, :n] = 1.0
    return Batch(token_ids, slot_ids, intent_ids, mask, lengths, list(examples))


def make_batches(examples: Sequence[Example], vocabs: Vocabs, batch_size: int = 20,
                 shuffle_seed=None) -> list[Batch]:
    """Pad each batch to its own longest utterance.

    ``shuffle_seed`` may be an int, a ``numpy.random.Generator`` (consumed in
    place) or ``None`` to keep file order.
    """
    if not examples:
        raise ContractError("make_batches needs at least one example")
    if batch_size <= 0:
        raise ContractError(f"batch_size must be positive, got {batch_size}")
    flagged = unknown_labels(examples, vocabs)
    if flagged["slot"] or flagged["intent"]:
        logger.warning("labels unseen in training: slots=%s intents=%s",
                       sorted(flagged["slot"]), sorted(flagged["intent"]))
    order = np.arange(len(examples))
    if shuffle_seed is not None:
        rng = shuffle_seed if isinstance(shuffle_seed, np.random.Generator) \
            else np.random.default_rng(shuffle_seed)
        order = rng.permutation(len(examples))
    return [collate([examples[i] for i in order[lo:lo + batch_size]], vocabs)
            for lo in range(0, len(examples), batch_size)]


def decode_batch(batch: Batch, vocabs: Vocabs) -> list[Example]:
    out = []
    for i, n in enumerate(batch.lengths):
        n = int(n)
        tokens = [vocabs.word.token(int(t)) for t in batch.token_ids[i, :n]]
        tags = [vocabs.slot.token(int(t)) for t in batch.slot_ids[i, :n]]
        out.append(Example(tokens, tags, vocabs.intent.token(int(batch.intent_ids[i]))))
    return out


def dataset_statistics(train, valid, test, vocabs: Vocabs) -> dict:
    """The quantities of the standard ATIS/Snips statistics table."""
    lengths = [len(ex.tokens) for ex in train + valid + test]
    return {
        "vocab_size": vocabs.word.content_size(),
        "average_sentence_length": float(np.mean(lengths)),
        "intents": vocabs.intent.content_size(),
        "slots": vocabs.slot.content_size(),
        "train": len(train),
        "valid": len(valid),
        "test": len(test),
    }
