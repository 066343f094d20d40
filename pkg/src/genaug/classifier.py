"""Two-stage classifier training on few-shot plus generated data.

Stage 1 fits the encoder (initialized from the pretrained backbone, mean
pooled) and a linear head on the few-shot set with smoothed cross-entropy,
picking learning rate and batch size from a small grid by dev accuracy.
Stage 2 continues on the generated set with label smoothing, a temporal
ensembling regularizer, and threshold filtering of noisy samples.
"""

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .autodiff import ParameterSet, Tape, ops
from .data import BOS, LabeledSequence
from .model import Backbone, forward_hidden
from .tuning import sgd_update

PROB_FLOOR = 1e-12


class ClassifierError(RuntimeError):
    pass


@dataclass
class ClassifierConfig:
    label_smooth: float = 0.15     # epsilon
    momentum: float = 0.9          # ensemble momentum
    reg_weight: float = 20.0       # ensemble regularizer weight
    threshold: float = 0.8         # retain a sample when ensembled prob > this
    refresh_period: int = 20       # steps between full ensemble refreshes
    stage2_steps: int = 600
    stage2_lr: float = 1e-3
    stage2_batch: int = 8
    stage1_steps: int = 150
    stage1_lrs: tuple = (3e-3, 1e-3)
    stage1_batches: tuple = (4, 8)
    seed: int = 0
    collect_traces: bool = False

    def __post_init__(self):
        if not 0.0 <= self.label_smooth < 1.0:
            raise ValueError("label_smooth must be in [0, 1)")
        if not 0.0 < self.momentum < 1.0:
            raise ValueError("momentum must be in (0, 1)")
        if self.reg_weight < 0:
            raise ValueError("reg_weight must be >= 0")
        if not 0.0 <= self.threshold < 1.0:
            raise ValueError("threshold must be in [0, 1)")
        if self.refresh_period < 1 or self.stage2_steps < 0 or self.stage1_steps < 0:
            raise ValueError("invalid step counts")


# ---------------------------------------------------------------------------
# pieces


def smoothed_targets(label: int, num_labels: int, eps: float) -> np.ndarray:
    """1(l = label) (1 - eps) + eps / L."""
    if not 0 <= label < num_labels:
        raise ValueError(f"label {label} out of range")
    if not 0.0 <= eps < 1.0:
        raise ValueError("eps must be in [0, 1)")
    q = np.full(num_labels, eps / num_labels)
    q[label] += 1.0 - eps
    return q


def kl_divergence(a: np.ndarray, b: np.ndarray) -> float:
    """KL(a || b) with 0 log 0 = 0 and floored b."""
    a = np.asarray(a, dtype=np.float64)
    b = np.maximum(np.asarray(b, dtype=np.float64), PROB_FLOOR)
    mask = a > 0
    return float(np.sum(a[mask] * (np.log(a[mask]) - np.log(b[mask]))))


def class_loss(p, q, z_bar, reg_weight: float, flags: dict | None = None) -> float:
    """-sum q log p - reg_weight * sum z_bar log(p / z_bar).

    The second term equals reg_weight * KL(z_bar || p). Probabilities are
    floored at 1e-12 inside logs; flooring is flagged when it fires.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    z = np.asarray(z_bar, dtype=np.float64)
    if flags is not None and np.any(p < PROB_FLOOR):
        flags["floored"] = True
    pf = np.maximum(p, PROB_FLOOR)
    ce = -float(np.dot(q, np.log(pf)))
    mask = z > 0
    reg = -float(np.sum(z[mask] * (np.log(pf[mask]) - np.log(z[mask]))))
    return ce + reg_weight * reg


@dataclass(frozen=True)
class EnsembleState:
    """Accumulated prediction, bias-corrected average, and update count."""

    z_hat: np.ndarray
    t: int
    momentum: float
    z_bar: np.ndarray | None

    @classmethod
    def zero(cls, num_labels: int, momentum: float) -> "EnsembleState":
        return cls(np.zeros(num_labels), 0, momentum, None)


def update_ensemble(state: EnsembleState, p: np.ndarray) -> EnsembleState:
    """z_hat <- g z_hat + (1-g) p; z_bar <- z_hat / (1 - g^t)."""
    g = state.momentum
    z_hat = g * state.z_hat + (1.0 - g) * np.asarray(p, dtype=np.float64)
    t = state.t + 1
    z_bar = z_hat / (1.0 - g**t)
    return EnsembleState(z_hat, t, g, z_bar)


def filter_retained(dataset: list[LabeledSequence], states: list[EnsembleState],
                    threshold: float) -> list[int]:
    """Indices whose ensembled probability of their own label exceeds the
    threshold (strictly); untouched states (t = 0) are retained."""
    out = []
    for i, (seq, st) in enumerate(zip(dataset, states)):
        if st.t == 0 or st.z_bar[seq.label] > threshold:
            out.append(i)
    return out


# ---------------------------------------------------------------------------
# model


class Classifier:
    """Backbone-initialized encoder with mean pooling and a linear head."""

    def __init__(self, cfg, num_labels: int, params: ParameterSet):
        self.cfg = cfg
        self.num_labels = num_labels
        self.params = params

    @classmethod
    def init_from_backbone(cls, backbone: Backbone, num_labels: int, seed: int) -> "Classifier":
        rng = np.random.default_rng([int(seed), 601])
        ps = ParameterSet()
        for n in backbone.params.names():
            ps.add(n, backbone.params[n], trainable=True)
        ps.add("head_w", rng.normal(0.0, 0.02, size=(backbone.cfg.d_model, num_labels)))
        ps.add("head_b", np.zeros(num_labels))
        return cls(backbone.cfg, num_labels, ps)

    def view(self, tape: Tape | None = None) -> dict:
        if tape is None:
            return {n: self.params.data(n) for n in self.params.names()}
        return tape.watch(self.params)

    def logits_graph(self, view: dict, seq: LabeledSequence):
        ids = [BOS] + seq.tokens[:-1]
        h = forward_hidden(view, self.cfg, ids)
        pool = np.full((1, len(ids)), 1.0 / len(ids))
        pooled = ops.matmul(pool, h)
        out = ops.add(ops.matmul(pooled, view["head_w"]), view["head_b"])
        return ops.reshape(out, (self.num_labels,))

    def predict_proba(self, seq: LabeledSequence) -> np.ndarray:
        logits = self.logits_graph(self.view(), seq)
        return ops.softmax_stable(np.asarray(logits))

    def predict(self, seq: LabeledSequence) -> int:
        return int(np.argmax(self.predict_proba(seq)))

    def copy(self) -> "Classifier":
        return Classifier(self.cfg, self.num_labels, self.params.copy())


def _sample_loss_node(clf: Classifier, view: dict, seq: LabeledSequence,
                      eps: float, reg_weight: float, state: EnsembleState | None):
    """Smoothed cross-entropy plus (when the state has updates and the
    weight is positive) the ensemble regularizer, as one graph node."""
    logits = clf.logits_graph(view, seq)
    lp = ops.log_softmax(logits)
    q = smoothed_targets(seq.label, clf.num_labels, eps)
    node = ops.neg(ops.dot(q, lp))
    if state is not None and state.t > 0 and reg_weight > 0.0:
        z = state.z_bar
        # reg_weight * KL(z || p) = reg_weight * (sum z log z - sum z log p)
        ent = float(np.sum(z[z > 0] * np.log(z[z > 0])))
        node = ops.add(node, ops.scale(ops.sub(np.asarray(ent), ops.dot(z, lp)),
                                       reg_weight))
    return node


def _train_steps(clf: Classifier, data: list[LabeledSequence], steps: int,
                 lr: float, batch: int, eps: float, rng, losses: list) -> None:
    for step in range(steps):
        idx = rng.choice(len(data), size=min(batch, len(data)), replace=False)
        tape = Tape()
        view = clf.view(tape)
        total = None
        for i in idx:
            node = _sample_loss_node(clf, view, data[int(i)], eps, 0.0, None)
            total = node if total is None else ops.add(total, node)
        loss = ops.scale(total, 1.0 / idx.size)
        losses.append(float(loss.data))
        grads = tape.param_gradients(loss, clf.params)
        sgd_update(clf.params, grads, lr, f"classifier stage-1 step {step}")


def train_classifier(backbone: Backbone, train: list[LabeledSequence],
                     dev: list[LabeledSequence], gen: list[LabeledSequence],
                     cfg: ClassifierConfig, num_labels: int):
    """Stage 1 on the few-shot set (grid-searched on dev), stage 2 on the
    generated set with ensembling and filtering.

    Returns (clf, stage1_clf, history); stage1_clf is the model before any
    stage-2 updates."""
    if not train:
        raise ValueError("empty training set")
    if cfg.stage2_steps > 0 and not gen:
        raise ValueError("stage 2 requested but the generated set is empty")

    arms = list(product(cfg.stage1_lrs, cfg.stage1_batches))
    history: dict = {"stage1": {"arms": [], "loss": []}, "stage2": {"loss": [], "refreshes": []}}
    best = None
    for arm_idx, (lr, batch) in enumerate(arms):
        clf = Classifier.init_from_backbone(backbone, num_labels, cfg.seed)
        rng = np.random.default_rng([int(cfg.seed), 501, arm_idx])
        losses: list = []
        _train_steps(clf, train, cfg.stage1_steps, lr, batch, cfg.label_smooth,
                     rng, losses)
        dev_acc = float(np.mean([clf.predict(s) == s.label for s in dev])) if dev else 0.0
        history["stage1"]["arms"].append(
            {"lr": lr, "batch": batch, "dev_accuracy": dev_acc})
        if best is None or dev_acc > best[0]:
            best = (dev_acc, arm_idx, clf, losses)
    _, chosen, clf, losses = best
    history["stage1"]["chosen"] = chosen
    history["stage1"]["loss"] = losses
    stage1_clf = clf.copy()

    if cfg.stage2_steps == 0:
        return clf, stage1_clf, history

    states = [EnsembleState.zero(num_labels, cfg.momentum) for _ in gen]
    retained = filter_retained(gen, states, cfg.threshold)
    rng2 = np.random.default_rng([int(cfg.seed), 502])
    traces: list = []
    for step in range(cfg.stage2_steps):
        if not retained:
            raise ClassifierError(
                f"all generated samples filtered out at step {step}")
        pool = np.asarray(retained)
        idx = rng2.choice(pool, size=min(cfg.stage2_batch, pool.size), replace=False)
        tape = Tape()
        view = clf.view(tape)
        total = None
        for i in idx:
            node = _sample_loss_node(clf, view, gen[int(i)], cfg.label_smooth,
                                     cfg.reg_weight, states[int(i)])
            total = node if total is None else ops.add(total, node)
        loss = ops.scale(total, 1.0 / idx.size)
        history["stage2"]["loss"].append(float(loss.data))
        grads = tape.param_gradients(loss, clf.params)
        sgd_update(clf.params, grads, cfg.stage2_lr, f"classifier stage-2 step {step}")
        if (step + 1) % cfg.refresh_period == 0:
            # refresh uses the parameters as of this step, over all of gen
            for i, seq in enumerate(gen):
                states[i] = update_ensemble(states[i], clf.predict_proba(seq))
            retained = filter_retained(gen, states, cfg.threshold)
            history["stage2"]["refreshes"].append(
                {"step": step + 1, "retained": len(retained)})
            if cfg.collect_traces:
                rset = set(retained)
                for i, st in enumerate(states):
                    traces.append({"sample_id": i, "t": st.t,
                                   "z_bar": [float(x) for x in st.z_bar],
                                   "retained": i in rset})
    history["stage2"]["final_states"] = states
    history["stage2"]["final_retained"] = retained
    if cfg.collect_traces:
        history["stage2"]["traces"] = traces
    return clf, stage1_clf, history


def evaluate_classifier(clf: Classifier, dataset: list[LabeledSequence]) -> dict:
    """Accuracy, macro-F1, and Matthews correlation of argmax predictions."""
    from .metrics import accuracy, macro_f1, matthews_corr

    if not dataset:
        raise ValueError("empty dataset")
    y_true = [s.label for s in dataset]
    y_pred = [clf.predict(s) for s in dataset]
    mcc, defined = matthews_corr(y_true, y_pred, clf.num_labels)
    return {
        "accuracy": accuracy(y_true, y_pred),
        "macro_f1": macro_f1(y_true, y_pred, clf.num_labels),
        "mcc": mcc,
        "mcc_defined": defined,
    }
