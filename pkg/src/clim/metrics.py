"""Chunk-level slot F1, intent accuracy and seesaw diagnostics."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence

from clim.exceptions import ContractError, DataError

_TAG = re.compile(r"^([BI])-(.+)$")


@dataclass(frozen=True, order=True)
class Chunk:
    label: str
    start: int  # inclusive
    end: int    # exclusive


def parse_tag(tag: str) -> tuple[str, str]:
    """``'B-loc' -> ('B', 'loc')``, ``'O' -> ('O', '')``."""
    if tag == "O":
        return "O", ""
    m = _TAG.match(tag)
    if m is None:
        raise DataError(f"malformed BIO tag {tag!r}")
    return m.group(1), m.group(2)


def _scan(tags: Sequence[str]):
    chunks, repairs = [], 0
    label, start = None, 0
    for i, tag in enumerate(tags):
        prefix, kind = parse_tag(tag)
        if prefix == "I" and label == kind:
            continue
        if label is not None:
            chunks.append(Chunk(label, start, i))
            label = None
        if prefix == "O":
            continue
        if prefix == "I":
            # I- without a matching predecessor opens a chunk, as conlleval does
            repairs += 1
        label, start = kind, i
    if label is not None:
        chunks.append(Chunk(label, start, len(tags)))
    return chunks, repairs


def extract_chunks(tags: Sequence[str]) -> set[Chunk]:
    return set(_scan(tags)[0])


def count_repairs(tags: Sequence[str]) -> int:
    """Number of chunks that had to be opened by an ``I-`` tag."""
    return _scan(tags)[1]


def tags_from_chunks(chunks: Iterable[Chunk], length: int) -> list[str]:
    tags = ["O"] * length
    for ch in chunks:
        tags[ch.start] = f"B-{ch.label}"
        for i in range(ch.start + 1, ch.end):
            tags[i] = f"I-{ch.label}"
    return tags


def f1_from_counts(correct: int, n_pred: int, n_gold: int) -> tuple[float, float, float]:
    precision = correct / n_pred if n_pred else 0.0
    recall = correct / n_gold if n_gold else 0.0
    if precision + recall == 0:
        return precision, recall, 0.0
    return precision, recall, 2 * precision * recall / (precision + recall)


def slot_f1(gold: Sequence[Sequence[str]], pred: Sequence[Sequence[str]]) -> tuple[float, float, float]:
    """Micro-averaged (precision, recall, F1) over exact (label, span) chunk matches."""
    if len(gold) != len(pred):
        raise ContractError(f"{len(gold)} gold sequences but {len(pred)} predicted")
    correct = n_gold = n_pred = 0
    for i, (g, p) in enumerate(zip(gold, pred)):
        if len(g) != len(p):
            raise ContractError(f"sequence {i}: gold length {len(g)} != predicted length {len(p)}")
        gc, pc = extract_chunks(g), extract_chunks(p)
        correct += len(gc & pc)
        n_gold += len(gc)
        n_pred += len(pc)
    return f1_from_counts(correct, n_pred, n_gold)


def intent_accuracy(gold: Sequence, pred: Sequence) -> tuple[float, float]:
    """``(accuracy, error_rate)``."""
    if len(gold) != len(pred):
        raise ContractError(f"{len(gold)} gold intents but {len(pred)} predicted")
    if not gold:
        raise ContractError("intent_accuracy of an empty set")
    hits = sum(1 for g, p in zip(gold, pred) if g == p)
    accuracy = hits / len(gold)
    return accuracy, 1.0 - accuracy


def seesaw_report(trace) -> dict:
    """Per-epoch metric deltas and the seesaw index.

    The index is the fraction of consecutive epoch pairs in which one task's
    metric strictly rises while the other's strictly falls.
    """
    records = list(trace)
    if len(records) < 2:
        raise ContractError("seesaw_report needs at least two epochs")
    deltas, opposing = [], 0
    for prev, cur in zip(records, records[1:]):
        ds = cur.slot_f1 - prev.slot_f1
        di = cur.intent_acc - prev.intent_acc
        seesaw = (ds > 0 and di < 0) or (ds < 0 and di > 0)
        opposing += seesaw
        deltas.append({"epoch": cur.epoch, "slot_f1_delta": ds, "intent_acc_delta": di,
                       "seesaw": seesaw})
    return {"deltas": deltas, "seesaw_index": opposing / len(deltas)}


def write_prediction_dump(path, tokens: Sequence[Sequence[str]], gold_tags, pred_tags,
                          gold_intents, pred_intents) -> None:
    """``token<TAB>gold<TAB>pred`` lines, an intent comment line, then a blank line per utterance."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for toks, g, p, gi, pi in zip(tokens, gold_tags, pred_tags, gold_intents, pred_intents):
            for t, gt, pt in zip(toks, g, p):
                fh.write(f"{t}\t{gt}\t{pt}\n")
            fh.write(f"# intent gold={gi} pred={pi}\n\n")


def read_prediction_dump(path):
    """Inverse of :func:`write_prediction_dump`; returns a list of utterance dicts."""
    out, cur = [], {"tokens": [], "gold": [], "pred": []}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("# intent "):
                fields = dict(kv.split("=", 1) for kv in line[len("# intent "):].split())
                cur["gold_intent"], cur["pred_intent"] = fields["gold"], fields["pred"]
            elif not line:
                if cur["tokens"]:
                    out.append(cur)
                cur = {"tokens": [], "gold": [], "pred": []}
            else:
                t, g, p = line.split("\t")
                cur["tokens"].append(t)
                cur["gold"].append(g)
                cur["pred"].append(p)
    if cur["tokens"]:
        out.append(cur)
    return out
