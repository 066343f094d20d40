"""Synthetic labeled-sequence tasks with an exact Bayes oracle.

Grammar: at each content position, with the label's insertion probability
emit a token uniformly from the label's discriminative set, otherwise emit
from a shared first-order template chain (label-indiscriminate). The
per-position mixture is in closed form, so the label posterior of any
sequence, and the Bayes accuracy of the grammar itself, are exact. Shared
and discriminative pools are disjoint.
"""

from dataclasses import dataclass, field

import numpy as np

from .data import EOS, SEP, LabeledSequence, Vocabulary


@dataclass(frozen=True)
class SyntheticTaskSpec:
    vocab_size: int = 64
    num_labels: int = 2
    n_shared: int = 40
    n_disc: int = 10
    insert_probs: tuple = (0.2, 0.2)
    min_len: int = 8
    max_len: int = 16
    template_coherence: float = 0.9
    mode: str = "single"  # single | pair
    seed: int = 0

    def __post_init__(self):
        need = 4 + self.n_shared + self.num_labels * self.n_disc
        if self.vocab_size < need:
            raise ValueError(
                f"vocab_size {self.vocab_size} too small for layout (needs {need})"
            )
        if self.num_labels < 1 or self.n_shared < 1 or self.n_disc < 1:
            raise ValueError("num_labels, n_shared, n_disc must be >= 1")
        probs = self.insert_probs
        if isinstance(probs, (int, float)):
            probs = (float(probs),) * self.num_labels
        else:
            probs = tuple(float(p) for p in probs)
        if len(probs) != self.num_labels:
            raise ValueError("need one insertion probability per label")
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ValueError("insertion probabilities must be in [0, 1]")
        object.__setattr__(self, "insert_probs", probs)
        if not 1 <= self.min_len <= self.max_len:
            raise ValueError("need 1 <= min_len <= max_len")
        if not 0.0 <= self.template_coherence <= 1.0:
            raise ValueError("template_coherence must be in [0, 1]")
        if self.mode not in ("single", "pair"):
            raise ValueError("mode must be 'single' or 'pair'")

    @property
    def shared_tokens(self) -> range:
        return range(4, 4 + self.n_shared)

    def disc_tokens(self, label: int) -> range:
        start = 4 + self.n_shared + label * self.n_disc
        return range(start, start + self.n_disc)

    def build_vocabulary(self) -> Vocabulary:
        content = [f"s{i:02d}" for i in range(self.n_shared)]
        for label in range(self.num_labels):
            content += [f"d{label}x{i:02d}" for i in range(self.n_disc)]
        fillers = self.vocab_size - 4 - len(content)
        content += [f"u{i:02d}" for i in range(fillers)]
        return Vocabulary.build(content)

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size, "num_labels": self.num_labels,
            "n_shared": self.n_shared, "n_disc": self.n_disc,
            "insert_probs": list(self.insert_probs), "min_len": self.min_len,
            "max_len": self.max_len, "template_coherence": self.template_coherence,
            "mode": self.mode, "seed": self.seed,
        }


def content_distribution(spec: SyntheticTaskSpec, label: int,
                         prev: int | None) -> np.ndarray:
    """Exact next-content-token distribution; shared by the generator and
    the oracle so the two can never drift apart."""
    p = np.zeros(spec.vocab_size)
    shared = spec.shared_tokens
    m = spec.n_shared
    rho = spec.insert_probs[label]
    base = np.zeros(spec.vocab_size)
    if prev is not None and prev in shared:
        base[list(shared)] = (1.0 - spec.template_coherence) / m
        successor = shared.start + ((prev - shared.start) + 1) % m
        base[successor] += spec.template_coherence
    else:
        base[list(shared)] = 1.0 / m
    p += (1.0 - rho) * base
    p[list(spec.disc_tokens(label))] += rho / spec.n_disc
    return p


def sample_content(spec: SyntheticTaskSpec, label: int, length: int,
                   rng: np.random.Generator) -> list[int]:
    out: list[int] = []
    prev: int | None = None
    for _ in range(length):
        tok = int(rng.choice(spec.vocab_size, p=content_distribution(spec, label, prev)))
        out.append(tok)
        prev = tok
    return out


def _draw_length(spec: SyntheticTaskSpec, rng) -> int:
    return int(rng.integers(spec.min_len, spec.max_len + 1))


def sample_marginal_content(spec: SyntheticTaskSpec, rng) -> list[int]:
    label = int(rng.integers(spec.num_labels))
    return sample_content(spec, label, _draw_length(spec, rng), rng)


class BayesOracle:
    """Exact posterior-argmax labeler of the known grammar.

    Structural tokens and tokens outside the grammar's support contribute
    no likelihood (they are label-neutral); the conditioning first part of
    a pair is ignored entirely, as its process does not depend on the
    label.
    """

    def __init__(self, spec: SyntheticTaskSpec):
        self.spec = spec
        self._known = set(spec.shared_tokens)
        for label in range(spec.num_labels):
            self._known |= set(spec.disc_tokens(label))

    def _content(self, seq: LabeledSequence) -> list[int]:
        start = 0 if seq.sep_index is None else seq.sep_index + 1
        toks = [t for t in seq.tokens[start:] if t not in (EOS, SEP)]
        return toks

    def log_likelihoods(self, seq: LabeledSequence) -> np.ndarray:
        spec = self.spec
        ll = np.zeros(spec.num_labels)
        prev: int | None = None
        for tok in self._content(seq):
            if tok in self._known:
                for label in range(spec.num_labels):
                    p = content_distribution(spec, label, prev)[tok]
                    ll[label] += -np.inf if p == 0.0 else np.log(p)
            prev = tok
        return ll

    def posterior(self, seq: LabeledSequence) -> np.ndarray:
        ll = self.log_likelihoods(seq)
        finite = ll[np.isfinite(ll)]
        if finite.size == 0:
            return np.full(self.spec.num_labels, 1.0 / self.spec.num_labels)
        z = np.exp(ll - finite.max())
        return z / z.sum()

    def label(self, seq: LabeledSequence) -> int:
        return int(np.argmax(self.posterior(seq)))


def bayes_accuracy(spec: SyntheticTaskSpec) -> float:
    """Closed-form Bayes accuracy for equal insertion probabilities.

    A sequence is ambiguous only when no discriminative token was inserted
    (probability (1-rho)^m), in which case the posterior ties and argmax is
    right with probability 1/L; disjoint pools make any inserted token
    decisive.
    """
    probs = set(spec.insert_probs)
    if len(probs) != 1:
        raise ValueError("closed form requires equal insertion probabilities")
    rho = probs.pop()
    lengths = np.arange(spec.min_len, spec.max_len + 1)
    p_ambiguous = float(np.mean((1.0 - rho) ** lengths))
    tie = 1.0 / spec.num_labels
    return 1.0 - (1.0 - tie) * p_ambiguous


def oracle_label_accuracy(dataset: list[LabeledSequence], oracle: BayesOracle) -> float:
    """Fraction of samples whose oracle label matches the generating label."""
    if not dataset:
        raise ValueError("empty generated dataset")
    hits = sum(oracle.label(seq) == seq.label for seq in dataset)
    return hits / len(dataset)


@dataclass
class TaskBundle:
    spec: SyntheticTaskSpec
    vocab: Vocabulary
    corpus: list
    train: list
    dev: list
    test: list
    oracle: BayesOracle
    seed_phrases: dict = field(default_factory=dict)

    @property
    def start_tokens(self) -> tuple:
        return tuple(self.spec.shared_tokens)


def make_synthetic_task(spec: SyntheticTaskSpec, k_train: int, dev_size: int,
                        test_size: int, corpus_size: int) -> TaskBundle:
    """Pretraining corpus (marginal grammar), K-per-label train split, dev
    and test splits, and the exact oracle. Sample ids are unique across
    splits."""
    if k_train < 1 or corpus_size < 1:
        raise ValueError("k_train and corpus_size must be >= 1")
    L = spec.num_labels
    if dev_size % L or test_size % L:
        raise ValueError("dev_size and test_size must be divisible by num_labels")
    rng = np.random.default_rng([int(spec.seed), 701])
    vocab = spec.build_vocabulary()
    corpus = [sample_marginal_content(spec, rng) + [EOS] for _ in range(corpus_size)]

    uid = 0

    def draw_split(per_label: int) -> list[LabeledSequence]:
        nonlocal uid
        split = []
        for label in range(L):
            for _ in range(per_label):
                if spec.mode == "pair":
                    first = sample_marginal_content(spec, rng)
                    second = sample_content(spec, label, _draw_length(spec, rng), rng)
                    seq = LabeledSequence(first + [SEP] + second + [EOS], label,
                                          sep_index=len(first), uid=uid)
                else:
                    seq = LabeledSequence(
                        sample_content(spec, label, _draw_length(spec, rng), rng) + [EOS],
                        label, uid=uid)
                uid += 1
                split.append(seq)
        return split

    train = draw_split(k_train)
    dev = draw_split(dev_size // L)
    test = draw_split(test_size // L)
    seed_phrases = {label: list(spec.disc_tokens(label)) for label in range(L)}
    return TaskBundle(spec, vocab, corpus, train, dev, test, BayesOracle(spec),
                      seed_phrases=seed_phrases)
