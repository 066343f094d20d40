"""Decoder-only transformer with a frozen backbone and per-label prefixes.

The backbone is pretrained on a task corpus by next-token maximum
likelihood and frozen. Label conditioning happens only through trainable
prefixes: P key/value rows prepended to every attention layer, plus (for
sequence pairs) a learnable infix embedding substituted at the separator
position. Output logits tie to the token embedding table.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import ParameterSet, Tape, ops
from .data import BOS, SEP, LabeledSequence, Vocabulary


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    prefix_len: int = 8
    max_len: int = 64
    ffn_mult: int = 4

    def __post_init__(self):
        if self.vocab_size < 4:
            raise ValueError("vocab_size must be >= 4 (reserved tokens)")
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.prefix_len < 1:
            raise ValueError("prefix_len must be >= 1")
        if self.n_layers < 0 or self.max_len < 1:
            raise ValueError("invalid n_layers/max_len")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "d_model": self.d_model,
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "prefix_len": self.prefix_len,
            "max_len": self.max_len,
            "ffn_mult": self.ffn_mult,
        }


def backbone_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    d, f = cfg.d_model, cfg.ffn_mult * cfg.d_model
    shapes = {
        "tok_emb": (cfg.vocab_size, d),
        "pos_emb": (cfg.max_len, d),
    }
    for i in range(cfg.n_layers):
        p = f"layer{i}."
        shapes.update({
            p + "ln1_g": (d,), p + "ln1_b": (d,),
            p + "wq": (d, d), p + "bq": (d,),
            p + "wk": (d, d), p + "bk": (d,),
            p + "wv": (d, d), p + "bv": (d,),
            p + "wo": (d, d), p + "bo": (d,),
            p + "ln2_g": (d,), p + "ln2_b": (d,),
            p + "w1": (d, f), p + "b1": (f,),
            p + "w2": (f, d), p + "b2": (d,),
        })
    if cfg.n_layers > 0:
        shapes["ln_f_g"] = (d,)
        shapes["ln_f_b"] = (d,)
    return shapes


def init_backbone_params(cfg: ModelConfig, seed: int) -> ParameterSet:
    rng = np.random.default_rng([int(seed), 101])
    ps = ParameterSet()
    for name, shape in backbone_shapes(cfg).items():
        leaf = name.split(".")[-1]
        if leaf.endswith("_g"):
            ps.add(name, np.ones(shape))
        elif leaf.endswith("_b") or leaf in ("bq", "bk", "bv", "bo", "b1", "b2"):
            ps.add(name, np.zeros(shape))
        else:
            ps.add(name, rng.normal(0.0, 0.02, size=shape))
    return ps


class Backbone:
    """Frozen transformer parameters plus config and vocabulary."""

    def __init__(self, cfg: ModelConfig, vocab: Vocabulary, params: ParameterSet):
        if len(vocab) != cfg.vocab_size:
            raise ValueError("vocabulary size does not match config")
        self.cfg = cfg
        self.vocab = vocab
        self.params = params

    def view(self, tape: Tape | None = None) -> dict:
        if tape is None:
            return {n: self.params.data(n) for n in self.params.names()}
        return tape.watch(self.params)


class PrefixBank:
    """Per-label trainable prefix key/value rows (and pair-mode infix)."""

    def __init__(self, cfg: ModelConfig, num_labels: int, pair_mode: bool,
                 params: ParameterSet):
        if num_labels < 1:
            raise ValueError("num_labels must be >= 1")
        self.cfg = cfg
        self.num_labels = num_labels
        self.pair_mode = pair_mode
        self.params = params

    @staticmethod
    def tensor_names(label: int, pair_mode: bool) -> list[str]:
        names = [f"label{label}.prefix_k", f"label{label}.prefix_v"]
        if pair_mode:
            names.append(f"label{label}.infix")
        return names

    def label_names(self, label: int) -> list[str]:
        return self.tensor_names(label, self.pair_mode)

    def label_view(self, view: dict, label: int) -> dict:
        out = {
            "k": view[f"label{label}.prefix_k"],
            "v": view[f"label{label}.prefix_v"],
        }
        if self.pair_mode:
            out["infix"] = view[f"label{label}.infix"]
        return out

    def view(self, tape: Tape | None = None) -> dict:
        if tape is None:
            return {n: self.params.data(n) for n in self.params.names()}
        return tape.watch(self.params)

    def clone(self) -> "PrefixBank":
        return PrefixBank(self.cfg, self.num_labels, self.pair_mode, self.params.copy())

    @classmethod
    def init(cls, backbone: Backbone, num_labels: int, pair_mode: bool, seed: int,
             seed_phrases: dict[int, list[int]] | None = None) -> "PrefixBank":
        """Prefixes start from the backbone's own keys/values on a per-label
        seed phrase when one is given, otherwise from small Gaussian noise."""
        cfg = backbone.cfg
        rng = np.random.default_rng([int(seed), 211])
        n_layers = max(cfg.n_layers, 1)  # keep tensors non-empty for 0-layer configs
        ps = ParameterSet()
        for label in range(num_labels):
            phrase = None if seed_phrases is None else seed_phrases.get(label)
            if phrase and cfg.n_layers > 0:
                k, v = collect_prefix_kv(backbone, list(phrase), cfg.prefix_len)
            else:
                k = rng.normal(0.0, 0.02, size=(n_layers, cfg.prefix_len, cfg.d_model))
                v = rng.normal(0.0, 0.02, size=(n_layers, cfg.prefix_len, cfg.d_model))
            ps.add(f"label{label}.prefix_k", k)
            ps.add(f"label{label}.prefix_v", v)
            if pair_mode:
                sep_emb = backbone.params.data("tok_emb")[SEP]
                jitter = rng.normal(0.0, 0.02, size=(1, cfg.d_model))
                ps.add(f"label{label}.infix", sep_emb[None, :] + jitter)
        return cls(cfg, num_labels, pair_mode, ps)


# ---------------------------------------------------------------------------
# forward


def forward_hidden(bb_view: dict, cfg: ModelConfig, ids: list[int],
                   prefix: dict | None = None, collect_kv: list | None = None):
    """Final hidden states (T, d) over the input ids; Var if any view entry
    is taped.

    ``prefix`` is a per-label view ({"k", "v", optional "infix"}); the infix
    embedding replaces the separator's input embedding when one occurs in
    ``ids``.
    """
    t = len(ids)
    if t > cfg.max_len:
        raise ValueError(f"input length {t} exceeds max_len {cfg.max_len}")
    x = ops.embed(bb_view["tok_emb"], ids)
    x = ops.add(x, ops.slice0(bb_view["pos_emb"], 0, t))
    if prefix is not None and "infix" in prefix and SEP in ids:
        pos = ids.index(SEP)
        keep = np.ones((t, 1))
        keep[pos, 0] = 0.0
        put = np.zeros((t, 1))
        put[pos, 0] = 1.0
        x = ops.add(ops.mul(x, keep), ops.matmul(put, prefix["infix"]))
    h = cfg.n_heads
    dh = cfg.head_dim
    for i in range(cfg.n_layers):
        p = f"layer{i}."
        xn = ops.layernorm(x, bb_view[p + "ln1_g"], bb_view[p + "ln1_b"])
        q = ops.add(ops.matmul(xn, bb_view[p + "wq"]), bb_view[p + "bq"])
        k = ops.add(ops.matmul(xn, bb_view[p + "wk"]), bb_view[p + "bk"])
        v = ops.add(ops.matmul(xn, bb_view[p + "wv"]), bb_view[p + "bv"])
        if collect_kv is not None:
            collect_kv.append((ops._data(k).copy(), ops._data(v).copy()))
        if prefix is not None:
            k = ops.concat0(ops.take0(prefix["k"], i), k)
            v = ops.concat0(ops.take0(prefix["v"], i), v)
        tk = t + (cfg.prefix_len if prefix is not None else 0)
        qh = ops.transpose(ops.reshape(q, (t, h, dh)), (1, 0, 2))
        kh = ops.transpose(ops.reshape(k, (tk, h, dh)), (1, 0, 2))
        vh = ops.transpose(ops.reshape(v, (tk, h, dh)), (1, 0, 2))
        att = ops.reshape(ops.transpose(ops.attention(qh, kh, vh), (1, 0, 2)), (t, cfg.d_model))
        x = ops.add(x, ops.add(ops.matmul(att, bb_view[p + "wo"]), bb_view[p + "bo"]))
        xn2 = ops.layernorm(x, bb_view[p + "ln2_g"], bb_view[p + "ln2_b"])
        ff = ops.gelu(ops.add(ops.matmul(xn2, bb_view[p + "w1"]), bb_view[p + "b1"]))
        x = ops.add(x, ops.add(ops.matmul(ff, bb_view[p + "w2"]), bb_view[p + "b2"]))
    if cfg.n_layers > 0:
        x = ops.layernorm(x, bb_view["ln_f_g"], bb_view["ln_f_b"])
    return x


def forward_logits(bb_view: dict, cfg: ModelConfig, ids: list[int],
                   prefix: dict | None = None, collect_kv: list | None = None):
    """Next-token logits (T, V); output weights tie to the embedding table."""
    x = forward_hidden(bb_view, cfg, ids, prefix=prefix, collect_kv=collect_kv)
    return ops.matmul(x, ops.transpose(bb_view["tok_emb"], (1, 0)))


def token_logprob_graph(bb_view: dict, cfg: ModelConfig, seq: LabeledSequence,
                        prefix: dict | None = None):
    """Per-position log p(x_j | x_<j) as a length-n vector (Var or ndarray)."""
    ids = [BOS] + seq.tokens[:-1]
    logits = forward_logits(bb_view, cfg, ids, prefix=prefix)
    lp = ops.log_softmax(logits)
    return ops.pick(lp, np.arange(seq.n), np.asarray(seq.tokens))


def collect_prefix_kv(backbone: Backbone, phrase: list[int], prefix_len: int):
    """Per-layer keys/values of the backbone run over [BOS] + phrase,
    cycled/truncated to the last ``prefix_len`` rows."""
    cfg = backbone.cfg
    ids = ([BOS] + list(phrase))[: cfg.max_len]
    kv: list = []
    forward_logits(backbone.view(), cfg, ids, collect_kv=kv)
    ks, vs = [], []
    t = len(ids)
    rows = [(t - prefix_len + j) % t for j in range(prefix_len)]
    for k, v in kv:
        ks.append(k[rows])
        vs.append(v[rows])
    return np.stack(ks), np.stack(vs)


# ---------------------------------------------------------------------------
# module operations


def next_token_distribution(backbone: Backbone, prefixes: PrefixBank | None,
                            label: int | None, context: list[int]) -> np.ndarray:
    """p(next token | context) under a label's prefix conditioning."""
    cfg = backbone.cfg
    if prefixes is not None:
        if label is None or not 0 <= label < prefixes.num_labels:
            raise ValueError(f"label {label} out of range [0, {prefixes.num_labels})")
    if len(context) >= cfg.max_len:
        raise ValueError(f"context length {len(context)} >= max_len {cfg.max_len}")
    ids = [BOS] + list(context)
    prefix = None
    if prefixes is not None:
        prefix = prefixes.label_view(prefixes.view(), label)
    logits = forward_logits(backbone.view(), cfg, ids, prefix=prefix)
    return ops.softmax_stable(logits[-1])


def sequence_token_logprobs(backbone: Backbone, prefixes: PrefixBank | None,
                            label: int | None, seq: LabeledSequence):
    """(log-probs (n,), included mask (n,)); pair-mode first parts are flagged out."""
    cfg = backbone.cfg
    if prefixes is not None and (label is None or not 0 <= label < prefixes.num_labels):
        raise ValueError(f"label {label} out of range [0, {prefixes.num_labels})")
    if seq.n > cfg.max_len:
        raise ValueError(f"sequence length {seq.n} exceeds max_len {cfg.max_len}")
    prefix = None
    if prefixes is not None:
        prefix = prefixes.label_view(prefixes.view(), label)
    lp = token_logprob_graph(backbone.view(), cfg, seq, prefix=prefix)
    included = np.zeros(seq.n, dtype=bool)
    included[seq.included_positions()] = True
    return np.asarray(lp), included


def pretrain_backbone(corpus: list[list[int]], vocab: Vocabulary, cfg: ModelConfig,
                      steps: int, seed: int, *, lr: float = 3e-3, batch_size: int = 16,
                      history: list | None = None) -> Backbone:
    """Next-token maximum likelihood on the corpus with Adam, then freeze."""
    if not corpus:
        raise ValueError("empty corpus")
    for s in corpus:
        if not s or max(s) >= cfg.vocab_size:
            raise ValueError("corpus token out of vocabulary range")
    params = init_backbone_params(cfg, seed)
    rng = np.random.default_rng([int(seed), 102])
    names = params.trainable_names()
    m_state = {n: np.zeros(params[n].shape) for n in names}
    v_state = {n: np.zeros(params[n].shape) for n in names}
    b1, b2, eps = 0.9, 0.999, 1e-8
    for step in range(steps):
        idx = rng.integers(0, len(corpus), size=batch_size)
        grads = {n: np.zeros(params[n].shape) for n in names}
        total = 0.0
        for i in idx:
            tokens = corpus[int(i)][: cfg.max_len]
            seq = LabeledSequence(tokens, 0)
            tape = Tape()
            view = tape.watch(params)
            lp = token_logprob_graph(view, cfg, seq)
            loss = ops.neg(ops.mean_all(lp))
            total += loss.item()
            for n, g in tape.param_gradients(loss, params).items():
                grads[n] += g
        if history is not None:
            history.append(total / batch_size)
        t = step + 1
        for n in names:
            g = grads[n] / batch_size
            m_state[n] = b1 * m_state[n] + (1 - b1) * g
            v_state[n] = b2 * v_state[n] + (1 - b2) * g * g
            mh = m_state[n] / (1 - b1**t)
            vh = v_state[n] / (1 - b2**t)
            params.assign(n, params.data(n) - lr * mh / (np.sqrt(vh) + eps))
    params.freeze_all()
    return Backbone(cfg, vocab, params)
