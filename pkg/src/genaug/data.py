"""Labeled token sequences and line-delimited dataset files.

In-memory sequences are index lists ending with the end-of-sequence token;
sequence pairs are ``x1 + [<sep>] + x2 + [<eos>]`` with the separator
position recorded. Dataset files store token strings without the
structural tokens ("text", optional "text2"), so write/load round-trips
exactly.
"""

import json
from dataclasses import dataclass

import numpy as np

PAD, BOS, EOS, SEP = 0, 1, 2, 3
RESERVED_TOKENS = ("<pad>", "<bos>", "<eos>", "<sep>")


class Vocabulary:
    """Token strings with dense indices; the first four are reserved."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if len(tokens) < 4 or tuple(tokens[:4]) != RESERVED_TOKENS:
            raise ValueError("vocabulary must start with the four reserved tokens")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary tokens must be unique")
        self.tokens = tokens
        self._index = {t: i for i, t in enumerate(tokens)}

    @classmethod
    def build(cls, content_tokens) -> "Vocabulary":
        return cls(list(RESERVED_TOKENS) + list(content_tokens))

    def __len__(self):
        return len(self.tokens)

    def index(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise ValueError(f"unknown token {token!r}") from None

    def token(self, i: int) -> str:
        return self.tokens[i]

    def to_indices(self, tokens) -> list[int]:
        return [self.index(t) for t in tokens]

    def to_tokens(self, indices) -> list[str]:
        return [self.tokens[i] for i in indices]


@dataclass
class LabeledSequence:
    """A token sequence (or pair split at ``sep_index``) with a label."""

    tokens: list[int]
    label: int
    sep_index: int | None = None
    uid: int | None = None

    @property
    def n(self) -> int:
        return len(self.tokens)

    def included_positions(self) -> np.ndarray:
        """Positions that enter losses: all, or only those after the separator."""
        if self.sep_index is None:
            return np.arange(self.n, dtype=np.intp)
        return np.arange(self.sep_index + 1, self.n, dtype=np.intp)

    def validate(self, vocab_size: int, num_labels: int, max_len: int) -> None:
        if not 1 <= self.n <= max_len:
            raise ValueError(f"sequence length {self.n} outside [1, {max_len}]")
        if min(self.tokens) < 0 or max(self.tokens) >= vocab_size:
            raise ValueError("token index out of vocabulary range")
        if not 0 <= self.label < num_labels:
            raise ValueError(f"label {self.label} outside [0, {num_labels})")
        if self.sep_index is not None:
            if self.tokens.count(SEP) != 1 or self.tokens[self.sep_index] != SEP:
                raise ValueError("pair sequence must contain exactly one separator")
            if self.sep_index + 1 >= self.n:
                raise ValueError("pair sequence has an empty second part")


def _strip_eos(tokens: list[int]) -> list[int]:
    return tokens[:-1] if tokens and tokens[-1] == EOS else list(tokens)


def sequence_to_record(seq: LabeledSequence, vocab: Vocabulary, source: str) -> dict:
    rec = {"label": int(seq.label), "source": source}
    if seq.uid is not None:
        rec["id"] = int(seq.uid)
    if seq.sep_index is None:
        rec["text"] = vocab.to_tokens(_strip_eos(seq.tokens))
    else:
        rec["text"] = vocab.to_tokens(seq.tokens[: seq.sep_index])
        rec["text2"] = vocab.to_tokens(_strip_eos(seq.tokens[seq.sep_index + 1 :]))
    return rec


def record_to_sequence(rec: dict, vocab: Vocabulary) -> LabeledSequence:
    first = vocab.to_indices(rec["text"])
    if "text2" in rec:
        second = vocab.to_indices(rec["text2"])
        tokens = first + [SEP] + second + [EOS]
        sep_index = len(first)
    else:
        tokens = first + [EOS]
        sep_index = None
    uid = rec.get("id")
    return LabeledSequence(tokens, int(rec["label"]), sep_index=sep_index,
                           uid=None if uid is None else int(uid))


def write_dataset(path, dataset, vocab: Vocabulary, source: str = "task") -> None:
    with open(path, "w", encoding="utf-8") as f:
        for seq in dataset:
            f.write(json.dumps(sequence_to_record(seq, vocab, source), sort_keys=True))
            f.write("\n")


def write_corpus(path, corpus: list[list[int]], vocab: Vocabulary) -> None:
    """Unlabeled pretraining sequences, one {"text": [...]} record per line."""
    with open(path, "w", encoding="utf-8") as f:
        for tokens in corpus:
            rec = {"text": vocab.to_tokens(_strip_eos(list(tokens)))}
            f.write(json.dumps(rec, sort_keys=True))
            f.write("\n")


def load_corpus(path, vocab: Vocabulary) -> list[list[int]]:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                out.append(vocab.to_indices(rec["text"]) + [EOS])
            except (ValueError, KeyError, TypeError) as e:
                raise ValueError(f"{path}, line {lineno}: {e}") from None
    return out


def load_dataset(path, vocab: Vocabulary, num_labels: int | None = None) -> list[LabeledSequence]:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                if not isinstance(rec, dict) or "text" not in rec or "label" not in rec:
                    raise ValueError("record needs 'text' and 'label' fields")
                seq = record_to_sequence(rec, vocab)
            except (ValueError, KeyError, TypeError) as e:
                raise ValueError(f"{path}, line {lineno}: {e}") from None
            if num_labels is not None and not 0 <= seq.label < num_labels:
                raise ValueError(
                    f"{path}, line {lineno}: label {seq.label} outside [0, {num_labels})"
                )
            out.append(seq)
    return out
