"""Sequence synthesis from tuned prefixes: temperature + top-k sampling
with repetition-penalized logits, greedy decoding, and dataset generation.

The penalty divides a token's logit by an extra factor when the token has
already been generated in the continuation (conditioning tokens excluded).
Top-k ranks by the penalty-adjusted logits, so k=1 coincides with greedy.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff.ops import softmax_stable
from .data import BOS, EOS, PAD, SEP, LabeledSequence
from .model import Backbone, PrefixBank, forward_logits

MAX_TEMPERATURE = 10.0  # highest temperature used anywhere in practice

_NEG = -1e30


@dataclass
class GenerationConfig:
    temperature: float = 0.5
    repetition_penalty: float = 1.1
    top_k: int = 10
    max_new_tokens: int = 48
    mode: str = "single"  # single | pair
    start_policy: str = "fixed"  # fixed | common | corpus
    start_tokens: tuple = ()
    samples_per_label: int = 500

    def __post_init__(self):
        if not 0.0 <= self.temperature <= MAX_TEMPERATURE:
            raise ValueError(
                f"temperature must be in [0, {MAX_TEMPERATURE}], got {self.temperature}"
            )
        if self.repetition_penalty < 1.0:
            raise ValueError("repetition_penalty must be >= 1")
        if self.top_k < 0 or self.max_new_tokens < 1:
            raise ValueError("top_k must be >= 0 and max_new_tokens >= 1")
        if self.mode not in ("single", "pair"):
            raise ValueError("mode must be 'single' or 'pair'")
        if self.start_policy not in ("fixed", "common", "corpus"):
            raise ValueError("start_policy must be 'fixed', 'common' or 'corpus'")
        self.start_tokens = tuple(int(t) for t in self.start_tokens)


def _penalized_probs(logits: np.ndarray, repeated: np.ndarray,
                     temperature: float, penalty: float) -> np.ndarray:
    divisor = np.where(repeated, temperature * penalty, temperature)
    return softmax_stable(logits / divisor)


def penalized_distribution(logits, generated, temperature: float,
                           rep_penalty: float) -> np.ndarray:
    """exp(z_i / w_i) normalized, with w_i = temperature * penalty for
    already-generated tokens and temperature otherwise."""
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0:
        raise ValueError("empty logits")
    if temperature == 0.0:
        raise ValueError("greedy handled by caller")
    if not 0.0 < temperature <= MAX_TEMPERATURE:
        raise ValueError(f"temperature must be in (0, {MAX_TEMPERATURE}]")
    if rep_penalty < 1.0:
        raise ValueError("rep_penalty must be >= 1")
    repeated = np.zeros(z.size, dtype=bool)
    for t in generated:
        if 0 <= int(t) < z.size:
            repeated[int(t)] = True
    return _penalized_probs(z, repeated, temperature, rep_penalty)


def _penalty_scores(logits: np.ndarray, repeated: np.ndarray, penalty: float) -> np.ndarray:
    """Penalty-adjusted logits z_i / (penalty if repeated else 1); their
    argmax is the temperature -> 0 limit of the penalized distribution."""
    return np.where(repeated, logits / penalty, logits)


def sample_sequence(backbone: Backbone, prefixes: PrefixBank, label: int,
                    cfg: GenerationConfig, rng: np.random.Generator,
                    conditioning: list[int] | None = None) -> list[int]:
    """One sequence under the label's prefix; ends with the end token.

    Pair mode conditions on a given first sequence; single mode starts from
    a token drawn from cfg.start_tokens. Greedy decoding (temperature 0)
    never consumes randomness, so its continuation is seed-invariant.
    """
    mcfg = backbone.cfg
    vsize = mcfg.vocab_size
    if not 0 <= label < prefixes.num_labels:
        raise ValueError(f"label {label} out of range [0, {prefixes.num_labels})")
    if cfg.top_k > vsize:
        raise ValueError(f"top_k {cfg.top_k} exceeds vocabulary size {vsize}")
    if cfg.mode == "pair":
        if conditioning is None:
            raise ValueError("pair mode needs a conditioning first sequence")
        if len(conditioning) > mcfg.max_len - 3:
            raise ValueError(
                f"conditioning length {len(conditioning)} leaves no room under "
                f"max_len {mcfg.max_len}"
            )
        context = list(conditioning) + [SEP]
    else:
        if not cfg.start_tokens:
            raise ValueError("single mode needs start_tokens")
        context = [int(rng.choice(cfg.start_tokens))]

    prefix = prefixes.label_view(prefixes.view(), label)
    bb_view = backbone.view()
    # "repeated" counts the generated continuation only, not conditioning
    generated: set[int] = set() if cfg.mode == "pair" else set(context)
    forbidden = [PAD, BOS, SEP]
    new = 0
    while new < cfg.max_new_tokens and len(context) < mcfg.max_len - 1:
        ids = [BOS] + context
        logits = np.asarray(forward_logits(bb_view, mcfg, ids, prefix=prefix))[-1].copy()
        logits[forbidden] = _NEG
        repeated = np.zeros(vsize, dtype=bool)
        for t in generated:
            repeated[t] = True
        scores = _penalty_scores(logits, repeated, cfg.repetition_penalty)
        if cfg.temperature == 0.0:
            nxt = int(np.argmax(scores))
        else:
            if cfg.top_k > 0:
                support = np.argsort(-scores, kind="stable")[: cfg.top_k]
            else:
                support = np.arange(vsize)
            probs = _penalized_probs(logits[support], repeated[support],
                                     cfg.temperature, cfg.repetition_penalty)
            nxt = int(rng.choice(support, p=probs))
        context.append(nxt)
        new += 1
        if nxt == EOS:
            break
        generated.add(nxt)
    if context[-1] != EOS:
        context.append(EOS)
    return context


def synthesize_dataset(backbone: Backbone, prefixes: PrefixBank,
                       label_cfgs, corpus: list[list[int]] | None,
                       n_per_label: int, seed: int) -> list[LabeledSequence]:
    """n_per_label sequences per label, labeled by the generating prefix.

    Each sequence draws from its own rng stream keyed by (seed, label,
    index), so ordering and parallelism cannot change the output. Pair mode
    draws the conditioning first sequence uniformly from the corpus.
    """
    if n_per_label < 1:
        raise ValueError("n_per_label must be >= 1")
    if isinstance(label_cfgs, GenerationConfig):
        label_cfgs = {l: label_cfgs for l in range(prefixes.num_labels)}
    out = []
    mcfg = backbone.cfg
    for label in range(prefixes.num_labels):
        cfg = label_cfgs[label]
        if cfg.mode == "pair" and not corpus:
            raise ValueError("pair mode needs a non-empty corpus")
        for i in range(n_per_label):
            rng = np.random.default_rng([int(seed), 17, int(label), int(i)])
            if cfg.mode == "pair":
                first = corpus[int(rng.integers(len(corpus)))]
                if first and first[-1] == EOS:
                    first = first[:-1]
                first = list(first)[: mcfg.max_len - 4]
                tokens = sample_sequence(backbone, prefixes, label, cfg, rng,
                                         conditioning=first)
                seq = LabeledSequence(tokens, label, sep_index=len(first))
            else:
                tokens = sample_sequence(backbone, prefixes, label, cfg, rng)
                seq = LabeledSequence(tokens, label)
            out.append(seq)
    return out
