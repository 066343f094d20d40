"""Finite-difference validation suites for every reverse-mode gradient path:
primitive compositions, the four generator losses, the classifier loss, and
the lookahead meta-gradient. Also provides the tiny random instances the
test suite reuses.
"""

import numpy as np

from .autodiff import (ParameterSet, Tape, finite_difference_oracle,
                       flatten_gradients, ops, relative_error)
from .classifier import Classifier, _sample_loss_node, smoothed_targets
from .data import EOS, LabeledSequence, Vocabulary
from .model import Backbone, ModelConfig, PrefixBank, init_backbone_params
from .tuning import (WeightNet, _batch_gen_loss_node, batch_disc_loss,
                     lookahead_disc_loss, meta_gradient)


def omnibus_composition(seed: int):
    """A scalar composition exercising every supported primitive.

    Returns (params, build) where build(view) -> scalar Var/array.
    """
    rng = np.random.default_rng([seed, 811])
    ps = ParameterSet()
    ps.add("table", rng.normal(0, 0.8, size=(7, 4)))
    ps.add("A", rng.normal(0, 0.5, size=(4, 6)))
    ps.add("b", rng.normal(0, 0.3, size=(6,)))
    ps.add("g", 1.0 + 0.2 * rng.normal(size=(6,)))
    ps.add("c", rng.normal(0, 0.3, size=(6,)))
    ids = rng.integers(0, 7, size=5)
    rows = np.arange(4)
    cols = rng.integers(0, 4, size=4)

    def build(view):
        x = ops.embed(view["table"], ids)                      # (5,4)
        h = ops.tanh(ops.add(ops.matmul(x, view["A"]), view["b"]))
        h = ops.layernorm(h, view["g"], view["c"])             # (5,6)
        q = ops.slice0(h, 0, 4)
        qh = ops.transpose(ops.reshape(q, (4, 2, 3)), (1, 0, 2))
        kh = ops.transpose(ops.reshape(h, (5, 2, 3)), (1, 0, 2))
        att = ops.attention(qh, kh, kh)                        # (2,4,3)
        a2 = ops.reshape(ops.transpose(att, (1, 0, 2)), (4, 6))
        z = ops.gelu(ops.matmul(a2, ops.transpose(view["A"], (1, 0))))  # (4,4)
        p = ops.softmax(z)
        lp = ops.log_softmax(z)
        picked = ops.pick(lp, rows, cols)
        t = ops.take(picked, [0, 2, 3])
        c2 = ops.concat0(p, ops.exp(ops.scale(z, 0.1)))        # (8,4)
        s1 = ops.mean_all(ops.mul(c2, c2))
        s2 = ops.dot(t, t)
        s3 = ops.sum_all(ops.div(p, ops.add(p, np.ones((4, 4)))))
        s4 = ops.sum_all(ops.take0(c2, 2))
        s5 = ops.sum_all(ops.log(ops.clamp_min(ops.add(p, np.full((4, 4), 0.5)), 0.1)))
        s6 = ops.sum_all(ops.sub(z, ops.neg(z)))
        total = ops.add(ops.add(s1, s2), ops.add(s3, ops.scale(s4, -0.5)))
        return ops.add(total, ops.add(s5, ops.scale(s6, 0.05)))

    return ps, build


def tiny_generator_instance(seed: int, n_tokens: int | None = None, num_labels: int = 2,
                            backbone_scale: float = 0.45, prefix_scale: float = 0.8):
    """Small random model with diverse per-label prefixes and one sequence
    per label. The backbone's matrices are drawn at a scale where prefixes
    genuinely steer the output distribution."""
    rng = np.random.default_rng([seed, 812])
    vocab = Vocabulary.build([f"t{i}" for i in range(4)])
    cfg = ModelConfig(vocab_size=8, d_model=8, n_layers=1, n_heads=2,
                      prefix_len=2, max_len=16)
    params = init_backbone_params(cfg, seed)
    for n in params.names():
        leaf = n.split(".")[-1]
        if not (leaf.endswith("_g") or leaf.endswith("_b") or leaf.startswith("b")):
            params.assign(n, rng.normal(0, backbone_scale, size=params[n].shape))
    params.freeze_all()
    backbone = Backbone(cfg, vocab, params)
    bank = PrefixBank.init(backbone, num_labels, False, seed=seed + 1)
    for n in bank.params.names():
        bank.params.assign(n, rng.normal(0, prefix_scale, size=bank.params[n].shape))
    if n_tokens is None:
        n_tokens = int(rng.integers(3, 7))
    batch = []
    for label in range(num_labels):
        toks = [int(x) for x in rng.integers(4, 8, size=n_tokens - 1)] + [EOS]
        batch.append(LabeledSequence(toks, label))
    return backbone, bank, batch


def tiny_classifier_instance(seed: int, num_labels: int = 2):
    rng = np.random.default_rng([seed, 813])
    vocab = Vocabulary.build([f"t{i}" for i in range(4)])
    cfg = ModelConfig(vocab_size=8, d_model=8, n_layers=1, n_heads=2,
                      prefix_len=1, max_len=8)
    params = init_backbone_params(cfg, seed)
    for n in params.names():
        leaf = n.split(".")[-1]
        if not (leaf.endswith("_g") or leaf.endswith("_b") or leaf.startswith("b")):
            params.assign(n, rng.normal(0, 0.4, size=params[n].shape))
    params.freeze_all()
    backbone = Backbone(cfg, vocab, params)
    clf = Classifier.init_from_backbone(backbone, num_labels, seed)
    n = int(rng.integers(3, 7))
    seq = LabeledSequence([int(x) for x in rng.integers(4, 8, size=n - 1)] + [EOS],
                          int(rng.integers(num_labels)))
    return clf, seq


def meta_instance(seed: int):
    backbone, bank, batch = tiny_generator_instance(seed)
    rng = np.random.default_rng([seed, 814])
    wn = WeightNet(hidden_dim=int(rng.integers(4, 17)), seed=seed + 2)
    for name in ("w1", "b1", "w2"):
        wn.params.assign(name, wn.params.data(name) * 8.0)
    return backbone, bank, wn, batch


# ---------------------------------------------------------------------------
# suites


def _check_primitives(seed: int) -> float:
    params, build = omnibus_composition(seed)
    tape = Tape()
    loss = build(tape.watch(params))
    grads = tape.param_gradients(loss, params)
    fd = finite_difference_oracle(lambda ps: float(ops._data(build(ps_view(ps)))),
                                  params, 1e-5)
    return relative_error(flatten_gradients(params, grads),
                          flatten_gradients(params, fd))


def ps_view(ps: ParameterSet) -> dict:
    return {n: ps.data(n) for n in ps.names()}


def _check_gen_loss(seed: int, kind: str) -> float:
    backbone, bank, batch = tiny_generator_instance(seed)
    rng = np.random.default_rng([seed, 815])
    weights = None
    mu = 0.0
    if kind == "weighted":
        weights = []
        for seq in batch:
            w = rng.random(seq.included_positions().size)
            weights.append(w / w.sum())
    elif kind == "combined":
        mu = float(rng.random() * 2.0)

    def value(ps):
        return float(ops._data(_batch_gen_loss_node(
            backbone, bank, Tape(), batch, weights=weights, mu=mu)))

    tape = Tape()
    loss = _batch_gen_loss_node(backbone, bank, tape, batch, weights=weights, mu=mu)
    grads = tape.param_gradients(loss, bank.params)
    fd = finite_difference_oracle(lambda ps: value(ps), bank.params, 1e-5)
    return relative_error(flatten_gradients(bank.params, grads),
                          flatten_gradients(bank.params, fd))


def _check_disc_loss(seed: int) -> float:
    backbone, bank, batch = tiny_generator_instance(seed)

    def value(ps):
        return float(ops._data(batch_disc_loss(backbone, bank, batch)[0]))

    tape = Tape()
    loss, _ = batch_disc_loss(backbone, bank, batch, tape=tape)
    grads = tape.param_gradients(loss, bank.params)
    fd = finite_difference_oracle(lambda ps: value(ps), bank.params, 1e-5)
    return relative_error(flatten_gradients(bank.params, grads),
                          flatten_gradients(bank.params, fd))


def _check_class_loss(seed: int) -> float:
    clf, seq = tiny_classifier_instance(seed)
    rng = np.random.default_rng([seed, 816])
    z = rng.random(clf.num_labels)
    z = z / z.sum()
    lam = float(rng.random() * 4.0)
    eps = float(rng.random() * 0.3)

    class FakeState:
        t = 1
        z_bar = z

    def node(view):
        return _sample_loss_node(clf, view, seq, eps, lam, FakeState())

    tape = Tape()
    loss = node(clf.view(tape))
    grads = tape.param_gradients(loss, clf.params)
    fd = finite_difference_oracle(
        lambda ps: float(ops._data(node(ps_view(ps)))), clf.params, 1e-5)
    return relative_error(flatten_gradients(clf.params, grads),
                          flatten_gradients(clf.params, fd))


def _check_meta(seed: int) -> float:
    backbone, bank, wn, batch = meta_instance(seed)
    alpha = 0.1
    grads, _ = meta_gradient(backbone, bank, wn, batch, alpha)
    fd = finite_difference_oracle(
        lambda ps: lookahead_disc_loss(backbone, bank, wn, batch, alpha),
        wn.params, 1e-4)
    return relative_error(flatten_gradients(wn.params, grads),
                          flatten_gradients(wn.params, fd))


SUITES = [
    ("primitives", _check_primitives, 20, 1e-5),
    ("gen-loss", lambda s: _check_gen_loss(s, "plain"), 20, 1e-5),
    ("weighted-gen-loss", lambda s: _check_gen_loss(s, "weighted"), 20, 1e-5),
    ("combined-loss", lambda s: _check_gen_loss(s, "combined"), 20, 1e-5),
    ("disc-loss", _check_disc_loss, 20, 1e-5),
    ("class-loss", _check_class_loss, 20, 1e-5),
    ("meta-gradient", _check_meta, 10, 1e-4),
]


def run_gradcheck(tol: float | None = None, verbose: bool = True) -> list[dict]:
    """Run every suite; returns one record per suite with the worst
    relative error. ``tol`` overrides all suite tolerances."""
    results = []
    for name, check, count, default_tol in SUITES:
        use_tol = default_tol if tol is None else tol
        worst = 0.0
        for seed in range(count):
            worst = max(worst, check(seed))
        passed = worst <= use_tol
        results.append({"suite": name, "instances": count, "worst": worst,
                        "tol": use_tol, "passed": passed})
        if verbose:
            status = "pass" if passed else "FAIL"
            print(f"[{status}] {name}: worst rel err {worst:.3e} "
                  f"(tol {use_tol:g}, {count} instances)")
    return results
