"""Command-line entry points.

Stages share a workspace directory (--out); per-seed artifacts use fixed
file names so the subcommands compose:

    genaug synth-task --config c.yaml --out ws
    genaug pretrain   --config c.yaml --out ws
    genaug tune-gen   --config c.yaml --out ws --objective w-gen
    genaug generate   --config c.yaml --out ws --objective w-gen
    genaug train-clf  --config c.yaml --out ws --objective w-gen
    genaug eval       --config c.yaml --out ws --objective w-gen
    genaug run        --config c.yaml --out ws
    genaug gradcheck  --tol 1e-4

Exit codes: 0 success, 1 stage failure, 2 configuration error.
"""

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, data, model_io
from .classifier import evaluate_classifier, train_classifier
from .config import (ConfigError, classifier_config, generation_configs,
                     load_config, model_config, task_spec, tuning_config)
from .gradcheck import run_gradcheck
from .metrics import perplexity
from .model import pretrain_backbone
from .pipeline import run_pipeline
from .sampling import synthesize_dataset
from .tasks import make_synthetic_task, oracle_label_accuracy
from .tuning import disc_loss, token_weights, tune_generators


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seed(cfg, args) -> int:
    if args.seed is not None:
        return int(args.seed)
    return int(cfg["experiment"]["seeds"][0])


def _bundle(cfg, seed):
    exp = cfg["experiment"]
    return make_synthetic_task(task_spec(cfg, seed), exp["k_train"],
                               exp["dev_size"], exp["test_size"],
                               exp["corpus_size"])


def cmd_synth_task(cfg, args) -> int:
    out = _out_dir(args)
    seed = _seed(cfg, args)
    bundle = _bundle(cfg, seed)
    data.write_corpus(out / f"corpus_seed{seed}.jsonl", bundle.corpus, bundle.vocab)
    for name, split in (("train", bundle.train), ("dev", bundle.dev),
                        ("test", bundle.test)):
        data.write_dataset(out / f"{name}_seed{seed}.jsonl", split, bundle.vocab)
    (out / f"task_seed{seed}.json").write_text(
        json.dumps(bundle.spec.to_dict(), sort_keys=True, indent=2) + "\n",
        encoding="utf-8")
    print(f"task written to {out} (seed {seed}, |train|={len(bundle.train)}, "
          f"|dev|={len(bundle.dev)}, |test|={len(bundle.test)})")
    return 0


def cmd_pretrain(cfg, args) -> int:
    out = _out_dir(args)
    seed = _seed(cfg, args)
    spec = task_spec(cfg, seed)
    vocab = spec.build_vocabulary()
    corpus = data.load_corpus(out / f"corpus_seed{seed}.jsonl", vocab)
    mcfg = model_config(cfg, spec.vocab_size)
    history: list = []
    backbone = pretrain_backbone(corpus, vocab, mcfg, steps=cfg["pretrain"]["steps"],
                                 seed=seed, lr=cfg["pretrain"]["lr"],
                                 batch_size=cfg["pretrain"]["batch_size"],
                                 history=history)
    model_io.save_backbone(out / f"backbone_seed{seed}.ckpt", backbone)
    last = history[-1] if history else float("nan")
    print(f"backbone written (seed {seed}, {cfg['pretrain']['steps']} steps, "
          f"final loss {last:.4f})")
    return 0


def cmd_tune_gen(cfg, args) -> int:
    out = _out_dir(args)
    seed = _seed(cfg, args)
    objective = args.objective or cfg["experiment"]["objectives"][0]
    backbone = model_io.load_backbone(out / f"backbone_seed{seed}.ckpt")
    spec = task_spec(cfg, seed)
    train = data.load_dataset(out / f"train_seed{seed}.jsonl", backbone.vocab,
                              num_labels=spec.num_labels)
    seed_phrases = {label: list(spec.disc_tokens(label))
                    for label in range(spec.num_labels)}
    tcfg = tuning_config(cfg, objective, seed)
    bank, wn, history = tune_generators(backbone, train, spec.num_labels, tcfg,
                                        seed_phrases=seed_phrases)
    model_io.save_generator(out / f"generator_{objective}_seed{seed}.ckpt",
                            backbone, bank,
                            weight_net_params=None if wn is None else wn.params,
                            meta={"objective": objective, "seed": seed})
    with open(out / f"losses_{objective}_seed{seed}.csv", "w", newline="",
              encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "epoch", "wgen", "gen", "disc"])
        for h in history:
            writer.writerow(["" if h[k] is None else h[k]
                             for k in ("step", "epoch", "wgen", "gen", "disc")])
    if wn is not None:
        dumps = []
        for seq in train:
            _, vals = disc_loss(backbone, bank, seq)
            w = token_weights(wn, vals)
            dumps.append({
                "sequence_id": seq.uid, "label": seq.label,
                "tokens": [backbone.vocab.token(seq.tokens[j])
                           for j in seq.included_positions()],
                "disc_values": [float(x) for x in vals],
                "weights": [float(x) for x in w]})
        (out / f"weights_{objective}_seed{seed}.json").write_text(
            json.dumps(dumps, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    print(f"generator written ({objective}, seed {seed}, "
          f"{len(history)} steps, final gen loss {history[-1]['gen']:.4f})")
    return 0


def cmd_generate(cfg, args) -> int:
    out = _out_dir(args)
    seed = _seed(cfg, args)
    objective = args.objective or cfg["experiment"]["objectives"][0]
    backbone = model_io.load_backbone(out / f"backbone_seed{seed}.ckpt")
    _, bank, _, _ = model_io.load_generator(
        out / f"generator_{objective}_seed{seed}.ckpt")
    bundle = _bundle(cfg, seed)
    gen_cfgs = generation_configs(cfg, bundle)
    corpus = data.load_corpus(out / f"corpus_seed{seed}.jsonl", backbone.vocab)
    gen_data = synthesize_dataset(backbone, bank, gen_cfgs, corpus,
                                  cfg["experiment"]["n_per_label"], seed)
    data.write_dataset(out / f"gen_{objective}_seed{seed}.jsonl", gen_data,
                       backbone.vocab, source="generated")
    acc = oracle_label_accuracy(gen_data, bundle.oracle)
    ppl = float(np.mean([perplexity(backbone, bank, l,
                                    [s for s in bundle.test if s.label == l])
                         for l in range(bundle.spec.num_labels)]))
    print(f"generated {len(gen_data)} samples ({objective}, seed {seed}); "
          f"oracle accuracy {acc:.4f}, test perplexity {ppl:.4f}")
    return 0


def cmd_train_clf(cfg, args) -> int:
    out = _out_dir(args)
    seed = _seed(cfg, args)
    objective = args.objective or cfg["experiment"]["classifier_objectives"][0]
    backbone = model_io.load_backbone(out / f"backbone_seed{seed}.ckpt")
    spec = task_spec(cfg, seed)
    train = data.load_dataset(out / f"train_seed{seed}.jsonl", backbone.vocab,
                              num_labels=spec.num_labels)
    dev = data.load_dataset(out / f"dev_seed{seed}.jsonl", backbone.vocab,
                            num_labels=spec.num_labels)
    gen = data.load_dataset(out / f"gen_{objective}_seed{seed}.jsonl",
                            backbone.vocab, num_labels=spec.num_labels)
    ccfg = classifier_config(cfg, seed)
    clf, stage1, history = train_classifier(backbone, train, dev, gen, ccfg,
                                            spec.num_labels)
    model_io.save_checkpoint(out / f"classifier_{objective}_seed{seed}.ckpt",
                             "classifier", backbone.cfg.to_dict(),
                             backbone.vocab.tokens, clf.params,
                             meta={"num_labels": spec.num_labels,
                                   "objective": objective, "seed": seed})
    hist = {"stage1": history["stage1"],
            "stage2": {k: v for k, v in history["stage2"].items()
                       if k not in ("final_states",)}}
    if ccfg.collect_traces and "traces" in history["stage2"]:
        with open(out / f"ensemble_trace_{objective}_seed{seed}.csv", "w",
                  newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            L = spec.num_labels
            writer.writerow(["sample_id", "t"]
                            + [f"z_bar_{k}" for k in range(L)] + ["retained"])
            for row in history["stage2"]["traces"]:
                writer.writerow([row["sample_id"], row["t"], *row["z_bar"],
                                 int(row["retained"])])
        hist["stage2"].pop("traces", None)
    (out / f"clf_history_{objective}_seed{seed}.json").write_text(
        json.dumps(hist, sort_keys=True, indent=2, default=float) + "\n",
        encoding="utf-8")
    print(f"classifier written ({objective}, seed {seed})")
    return 0


def cmd_eval(cfg, args) -> int:
    out = _out_dir(args)
    seed = _seed(cfg, args)
    objective = args.objective or cfg["experiment"]["classifier_objectives"][0]
    header, params = model_io.load_checkpoint(
        out / f"classifier_{objective}_seed{seed}.ckpt")
    from .classifier import Classifier
    from .data import Vocabulary
    from .model import ModelConfig

    vocab = Vocabulary(header["vocab"])
    clf = Classifier(ModelConfig(**header["config"]),
                     int(header["meta"]["num_labels"]), params)
    test = data.load_dataset(out / f"test_seed{seed}.jsonl", vocab,
                             num_labels=clf.num_labels)
    metrics = evaluate_classifier(clf, test)
    (out / f"metrics_{objective}_seed{seed}.json").write_text(
        json.dumps(metrics, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(metrics, sort_keys=True))
    return 0


def cmd_run(cfg, args) -> int:
    out = _out_dir(args)
    if args.objective:
        cfg = dict(cfg)
        cfg["experiment"] = dict(cfg["experiment"])
        cfg["experiment"]["objectives"] = [args.objective]
        cfg["experiment"]["classifier_objectives"] = [
            o for o in cfg["experiment"]["classifier_objectives"]
            if o == args.objective]
    if args.seed is not None:
        cfg = dict(cfg)
        cfg["experiment"] = dict(cfg["experiment"])
        cfg["experiment"]["seeds"] = [int(args.seed)]
    report = run_pipeline(cfg, out_dir=out)
    failures = [e for e in report["seeds"] if e["error"] is not None]
    for e in report["seeds"]:
        if e["error"] is not None:
            print(f"seed {e['seed']}: FAILED: {e['error']}")
            continue
        for obj, r in e["objectives"].items():
            line = (f"seed {e['seed']} {obj}: gen acc {r['gen_accuracy']:.4f}, "
                    f"ppl {r['perplexity']:.4f}")
            if r["classifier"]:
                line += (f", clf {r['classifier']['final_test']['accuracy']:.4f} "
                         f"(stage1 {r['classifier']['stage1_test']['accuracy']:.4f})")
            print(line)
    print(f"report written to {out / 'report.json'}")
    return 1 if failures else 0


def cmd_gradcheck(cfg, args) -> int:
    results = run_gradcheck(tol=args.tol)
    if args.tol is not None:
        print(f"tolerance override: {args.tol:g}")
    return 0 if all(r["passed"] for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="genaug",
        description="Meta-weighted generator tuning, data synthesis, and "
                    "noise-robust classifier training on synthetic tasks.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, needs_out=True, objective=False):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="YAML config path")
        p.add_argument("--seed", type=int, default=None)
        if needs_out:
            p.add_argument("--out", required=True, help="workspace directory")
        if objective:
            p.add_argument("--objective", choices=["w-gen", "gen", "gen+disc"],
                           default=None)
        p.set_defaults(fn=fn)
        return p

    add("synth-task", cmd_synth_task)
    add("pretrain", cmd_pretrain)
    add("tune-gen", cmd_tune_gen, objective=True)
    add("generate", cmd_generate, objective=True)
    add("train-clf", cmd_train_clf, objective=True)
    add("eval", cmd_eval, objective=True)
    add("run", cmd_run, objective=True)
    g = add("gradcheck", cmd_gradcheck, needs_out=False)
    g.add_argument("--tol", type=float, default=None,
                   help="override all suite tolerances")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
    except (ConfigError, FileNotFoundError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    try:
        return args.fn(cfg, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"stage failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
