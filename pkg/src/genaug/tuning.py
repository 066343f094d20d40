"""Generator tuning: generative / discriminative / token-weighted losses,
the token-weighting network, its lookahead meta-gradient, and the online
bi-level tuning loop.

The meta step per minibatch: (1) weight each token by a softmax over the
weighting net's score of its discriminative value, (2) take a lookahead
descent step of the weighted generative loss on the sample labels'
prefixes, (3) descend the weighting net on the discriminative loss at the
lookahead point (differentiated through the weights), (4) descend the
prefixes on the re-weighted generative loss.
"""

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ParameterSet, Tape, ops
from .data import LabeledSequence
from .model import Backbone, PrefixBank, token_logprob_graph

DISC_FLOOR = 1e-12

OBJECTIVES = ("w-gen", "gen", "gen+disc")


class TuningError(RuntimeError):
    """Raised when a tuning run diverges."""


@dataclass
class TuningConfig:
    lookahead_lr: float = 2e-2
    weight_net_lr: float = 1e-2
    prefix_lr: float = 5e-3
    batch_size: int = 2
    epochs: int = 20
    objective: str = "w-gen"
    combine_weight: float = 1.0  # mixing weight for the gen+disc objective
    weight_net_hidden: int = 100
    seed: int = 0

    def __post_init__(self):
        if min(self.lookahead_lr, self.weight_net_lr, self.prefix_lr) <= 0:
            raise ValueError("step sizes must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if self.combine_weight < 0:
            raise ValueError("combine_weight must be >= 0")
        if self.weight_net_hidden < 1:
            raise ValueError("weight_net_hidden must be >= 1")


# ---------------------------------------------------------------------------
# losses (scalar forms)


def gen_loss(logprobs) -> float:
    """Mean negative token log-likelihood over the given positions."""
    lp = np.asarray(logprobs, dtype=np.float64)
    if lp.size == 0:
        raise ValueError("no included positions for generative loss")
    return float(-lp.mean())


def weighted_gen_loss(logprobs, weights) -> float:
    """-sum_j w_j log p_j."""
    lp = np.asarray(logprobs, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if lp.shape != w.shape:
        raise ValueError(f"length mismatch: {lp.shape} vs {w.shape}")
    return float(-np.dot(w, lp))


def combined_loss(logprobs, disc_scalar: float, mu: float) -> float:
    """Generative loss plus mu times the discriminative scalar."""
    if mu < 0:
        raise ValueError("mu must be >= 0")
    return gen_loss(logprobs) + mu * float(disc_scalar)


def disc_loss_node(backbone: Backbone, bank: PrefixBank, view: dict,
                   seq: LabeledSequence):
    """Discriminative loss graph for one sequence.

    Per included token: p_true / sum_labels p_label, denominator floored at
    DISC_FLOOR. Returns (scalar node, per-token ratio values, clamped flag);
    the scalar is the negative mean ratio.
    """
    if bank.num_labels < 2:
        raise ValueError("discriminative loss needs at least 2 labels")
    included = seq.included_positions()
    bb_view = backbone.view()
    probs = []
    for label in range(bank.num_labels):
        lp = token_logprob_graph(bb_view, backbone.cfg, seq,
                                 prefix=bank.label_view(view, label))
        probs.append(ops.exp(ops.take(lp, included)))
    denom = probs[0]
    for p in probs[1:]:
        denom = ops.add(denom, p)
    clamped = bool(np.any(ops._data(denom) < DISC_FLOOR))
    ratio = ops.div(probs[seq.label], ops.clamp_min(denom, DISC_FLOOR))
    scalar = ops.neg(ops.mean_all(ratio))
    return scalar, np.asarray(ops._data(ratio)), clamped


def disc_loss(backbone: Backbone, prefixes: PrefixBank, seq: LabeledSequence):
    """(scalar, per-included-token values) of the discriminative loss."""
    scalar, values, _ = disc_loss_node(backbone, prefixes, prefixes.view(), seq)
    return float(ops._data(scalar)), values


# ---------------------------------------------------------------------------
# token-weighting network


class WeightNet:
    """Scalar -> hidden tanh layer -> scalar; scores are softmax-normalized
    over the sequence to produce token weights."""

    def __init__(self, hidden_dim: int = 100, seed: int = 0, params: ParameterSet | None = None):
        if params is not None:
            self.params = params
            self.hidden_dim = params["w1"].shape[1]
            return
        if hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")
        rng = np.random.default_rng([int(seed), 401])
        ps = ParameterSet()
        ps.add("w1", rng.normal(0.0, 0.1, size=(1, hidden_dim)))
        ps.add("b1", rng.normal(0.0, 0.1, size=(hidden_dim,)))
        ps.add("w2", rng.normal(0.0, 0.1, size=(hidden_dim, 1)))
        ps.add("b2", np.zeros((1,)))
        self.params = ps
        self.hidden_dim = hidden_dim

    @classmethod
    def constant(cls, hidden_dim: int = 4, frozen: bool = True) -> "WeightNet":
        """Zero output weights: every score is 0, so weights are uniform."""
        ps = ParameterSet()
        ps.add("w1", np.zeros((1, hidden_dim)), trainable=not frozen)
        ps.add("b1", np.zeros((hidden_dim,)), trainable=not frozen)
        ps.add("w2", np.zeros((hidden_dim, 1)), trainable=not frozen)
        ps.add("b2", np.zeros((1,)), trainable=not frozen)
        return cls(params=ps)

    @property
    def trainable(self) -> bool:
        return self.params.num_trainable > 0

    def score_graph(self, view: dict, values: np.ndarray):
        """Unnormalized scores (m,) for per-token inputs (m,)."""
        x = np.asarray(values, dtype=np.float64).reshape(-1, 1)
        h = ops.tanh(ops.add(ops.matmul(x, view["w1"]), view["b1"]))
        out = ops.add(ops.matmul(h, view["w2"]), view["b2"])
        return ops.reshape(out, (x.shape[0],))

    def scores(self, values: np.ndarray) -> np.ndarray:
        view = {n: self.params.data(n) for n in self.params.names()}
        return np.asarray(self.score_graph(view, values))


def token_weights(wn: WeightNet, disc_values) -> np.ndarray:
    """Softmax over the sequence of the weighting net's scores."""
    vals = np.asarray(disc_values, dtype=np.float64)
    if vals.size == 0:
        raise ValueError("empty disc_values")
    return ops.softmax_stable(wn.scores(vals))


# ---------------------------------------------------------------------------
# meta step


@dataclass
class MetaStepReport:
    weights: list = field(default_factory=list)        # per sample, included tokens
    disc_values: list = field(default_factory=list)
    alignments: list = field(default_factory=list)     # d_j per sample
    weighted_loss: float = 0.0                         # batch loss at current prefixes
    disc_before: float = 0.0
    disc_after: float = 0.0
    clamped: bool = False


def alignment(disc_grads: dict, token_grad: dict, names: list[str]) -> float:
    """Inner product between the discriminative gradient at the lookahead
    point and one token's generative gradient, over a label's tensors."""
    total = 0.0
    for n in names:
        total += float(np.dot(disc_grads[n].ravel(), token_grad[n].ravel()))
    return total


def _per_sample_parts(backbone: Backbone, bank: PrefixBank, wn: WeightNet,
                      batch: list[LabeledSequence]):
    """Per sample: included positions, log-prob values, disc values, weights,
    and per-token generative gradients w.r.t. the sample label's prefixes."""
    bb_view = backbone.view()
    raw_bank = bank.view()
    out = []
    for seq in batch:
        included = seq.included_positions()
        if included.size == 0:
            raise ValueError("sequence has no included positions")
        own = bank.label_names(seq.label)
        tape = Tape()
        view = dict(raw_bank)
        for n in own:
            view[n] = tape.leaf(bank.params.data(n), name=n)
        lp = token_logprob_graph(bb_view, backbone.cfg, seq,
                                 prefix=bank.label_view(view, seq.label))
        lp_vals = np.asarray(lp.data)
        _, disc_vals, _ = disc_loss_node(backbone, bank, raw_bank, seq)
        w = token_weights(wn, disc_vals)
        token_grads = []
        for j in included:
            seed = np.zeros(seq.n)
            seed[j] = 1.0
            node_grads = tape.gradients(lp, seed=seed)
            g = {}
            for n in own:
                leaf = tape._named[n]
                gn = node_grads.get(leaf.idx)
                g[n] = np.zeros(bank.params[n].shape) if gn is None else gn
            token_grads.append(g)
        out.append({
            "seq": seq, "included": included, "own": own,
            "logprobs": lp_vals[included], "disc_values": disc_vals,
            "weights": w, "token_grads": token_grads,
        })
    return out


def lookahead_bank(bank: PrefixBank, samples: list[dict], lr: float) -> PrefixBank:
    """One descent step of the batch-mean weighted generative loss, applied
    per sample to its own label's prefixes."""
    updates: dict[str, np.ndarray] = {}
    b = len(samples)
    for s in samples:
        for w_j, g in zip(s["weights"], s["token_grads"]):
            for n, gn in g.items():
                acc = updates.get(n)
                updates[n] = w_j * gn if acc is None else acc + w_j * gn
    hat = bank.clone()
    for n, u in updates.items():
        # descending -sum_j w_j log p_j moves along +sum_j w_j d(log p_j)
        hat.params.assign(n, hat.params.data(n) + (lr / b) * u)
    return hat


def batch_disc_loss(backbone: Backbone, bank: PrefixBank,
                    batch: list[LabeledSequence], tape: Tape | None = None):
    """Batch-mean discriminative loss; taped over the bank when requested."""
    view = bank.view(tape)
    total = None
    clamped = False
    for seq in batch:
        node, _, cl = disc_loss_node(backbone, bank, view, seq)
        clamped = clamped or cl
        total = node if total is None else ops.add(total, node)
    return ops.scale(total, 1.0 / len(batch)), clamped


def meta_gradient(backbone: Backbone, bank: PrefixBank, wn: WeightNet,
                  batch: list[LabeledSequence], lookahead_lr: float):
    """Gradient of the weighting net under the lookahead discriminative
    objective, computed directly from per-token alignments.

    Returns (omega_grads, MetaStepReport). The chain is: per-token
    generative gradients -> lookahead prefixes -> discriminative gradient
    there -> alignments d_j -> d(weights)/d(omega) through the softmax net.
    """
    if not batch:
        raise ValueError("empty batch")
    if lookahead_lr <= 0:
        raise ValueError("lookahead_lr must be positive")
    b = len(batch)
    samples = _per_sample_parts(backbone, bank, wn, batch)
    hat = lookahead_bank(bank, samples, lookahead_lr)

    disc_tape = Tape()
    disc_node, clamped = batch_disc_loss(backbone, hat, batch, tape=disc_tape)
    disc_grads = disc_tape.param_gradients(disc_node, hat.params)

    report = MetaStepReport(clamped=clamped, disc_after=float(disc_node.data))
    report.disc_before = float(ops._data(
        batch_disc_loss(backbone, bank, batch)[0]))
    wtape = Tape()
    wn_view = wtape.watch(wn.params)
    total = None
    for s in samples:
        d = np.array([alignment(disc_grads, g, s["own"]) for g in s["token_grads"]])
        report.alignments.append(d)
        report.weights.append(s["weights"])
        report.disc_values.append(s["disc_values"])
        report.weighted_loss += weighted_gen_loss(s["logprobs"], s["weights"]) / b
        w_node = ops.softmax(wn.score_graph(wn_view, s["disc_values"]))
        contrib = ops.dot((lookahead_lr / b) * d, w_node)
        total = contrib if total is None else ops.add(total, contrib)
    if wn.trainable:
        omega_grads = wtape.param_gradients(total, wn.params)
    else:
        omega_grads = {n: np.zeros(wn.params[n].shape) for n in wn.params.trainable_names()}
    return omega_grads, report


def lookahead_disc_loss(backbone: Backbone, bank: PrefixBank, wn: WeightNet,
                        batch: list[LabeledSequence], lookahead_lr: float) -> float:
    """The scalar map (weighting net -> disc loss at the lookahead prefixes);
    finite differences of this map are the oracle for meta_gradient."""
    samples = _per_sample_parts(backbone, bank, wn, batch)
    hat = lookahead_bank(bank, samples, lookahead_lr)
    node, _ = batch_disc_loss(backbone, hat, batch)
    return float(ops._data(node))


# ---------------------------------------------------------------------------
# tuning loop


def sgd_update(params: ParameterSet, grads: dict, lr: float, step_name: str = "") -> None:
    from .autodiff.tensor import NonFiniteValueError

    for n in params.trainable_names():
        try:
            params.assign(n, params.data(n) - lr * grads[n])
        except NonFiniteValueError:
            raise TuningError(f"divergence: non-finite update for {n} at {step_name}")


def _batch_gen_loss_node(backbone: Backbone, bank: PrefixBank, tape: Tape,
                         batch: list[LabeledSequence],
                         weights: list[np.ndarray] | None = None,
                         mu: float = 0.0):
    """Batch-mean loss graph: weighted or plain generative loss per sample,
    optionally plus mu times the discriminative loss (gen+disc objective)."""
    view = bank.view(tape)
    bb_view = backbone.view()
    total = None
    for i, seq in enumerate(batch):
        lp = token_logprob_graph(bb_view, backbone.cfg, seq,
                                 prefix=bank.label_view(view, seq.label))
        sel = ops.take(lp, seq.included_positions())
        if weights is None:
            node = ops.neg(ops.mean_all(sel))
        else:
            node = ops.neg(ops.dot(weights[i], sel))
        if mu > 0.0:
            disc_node, _, _ = disc_loss_node(backbone, bank, view, seq)
            node = ops.add(node, ops.scale(disc_node, mu))
        total = node if total is None else ops.add(total, node)
    return ops.scale(total, 1.0 / len(batch))


def tune_generators(backbone: Backbone, train: list[LabeledSequence], num_labels: int,
                    cfg: TuningConfig, *, pair_mode: bool | None = None,
                    seed_phrases: dict[int, list[int]] | None = None,
                    wn: WeightNet | None = None, seed: int | None = None):
    """Online bi-level tuning (objective "w-gen") or single-level descent
    ("gen", "gen+disc") of per-label prefixes on the few-shot set.

    Returns (PrefixBank, WeightNet | None, history). History holds one entry
    per minibatch step: {"step", "epoch", "wgen", "gen", "disc"}.
    """
    if not train:
        raise ValueError("empty training set")
    seed = cfg.seed if seed is None else seed
    if pair_mode is None:
        pair_mode = any(s.sep_index is not None for s in train)
    if cfg.objective in ("w-gen", "gen+disc"):
        if num_labels < 2:
            raise ValueError(f"objective {cfg.objective} needs >= 2 labels")
        present = {s.label for s in train}
        if present != set(range(num_labels)):
            raise ValueError("each label needs at least one training sample")
    bank = PrefixBank.init(backbone, num_labels, pair_mode, seed, seed_phrases=seed_phrases)
    if cfg.objective == "w-gen" and wn is None:
        wn = WeightNet(cfg.weight_net_hidden, seed)
    rng = np.random.default_rng([int(seed), 301])
    history: list[dict] = []
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train))
        for start in range(0, len(train), cfg.batch_size):
            batch = [train[int(i)] for i in order[start : start + cfg.batch_size]]
            # losses are recorded at the pre-update parameters
            entry = {"step": step, "epoch": epoch, "wgen": None}
            entry["gen"] = float(np.mean([gen_loss(s) for s in
                                          _batch_logprobs(backbone, bank, batch)]))
            if not np.isfinite(entry["gen"]):
                raise TuningError(f"divergence: non-finite loss at prefix step {step}")
            if cfg.objective == "w-gen":
                omega_grads, report = meta_gradient(backbone, bank, wn, batch,
                                                    cfg.lookahead_lr)
                entry["wgen"] = report.weighted_loss
                entry["disc"] = report.disc_before
                if wn.trainable:
                    sgd_update(wn.params, omega_grads, cfg.weight_net_lr,
                               f"weight-net step {step}")
                new_weights = [token_weights(wn, d) for d in report.disc_values]
                tape = Tape()
                loss = _batch_gen_loss_node(backbone, bank, tape, batch,
                                            weights=new_weights)
                grads = tape.param_gradients(loss, bank.params)
                sgd_update(bank.params, grads, cfg.prefix_lr, f"prefix step {step}")
            else:
                if num_labels >= 2:
                    entry["disc"] = float(ops._data(
                        batch_disc_loss(backbone, bank, batch)[0]))
                else:
                    entry["disc"] = None
                mu = cfg.combine_weight if cfg.objective == "gen+disc" else 0.0
                tape = Tape()
                loss = _batch_gen_loss_node(backbone, bank, tape, batch, mu=mu)
                grads = tape.param_gradients(loss, bank.params)
                sgd_update(bank.params, grads, cfg.prefix_lr, f"prefix step {step}")
            history.append(entry)
            step += 1
    return bank, wn, history


def _batch_logprobs(backbone: Backbone, bank: PrefixBank,
                    batch: list[LabeledSequence]) -> list[np.ndarray]:
    """Included-position log-probs per sample at the current prefixes."""
    view = bank.view()
    bb_view = backbone.view()
    out = []
    for seq in batch:
        lp = token_logprob_graph(bb_view, backbone.cfg, seq,
                                 prefix=bank.label_view(view, seq.label))
        out.append(np.asarray(lp)[seq.included_positions()])
    return out
