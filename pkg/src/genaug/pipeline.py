"""Full experiment runs: per-seed task construction, backbone pretraining,
generator tuning per objective, synthesis, classifier training, metrics,
and a seed-aggregated report with loss histories and token-weight dumps.
"""

import csv
import json
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .classifier import evaluate_classifier, train_classifier
from .config import (classifier_config, generation_configs, model_config,
                     task_spec, tuning_config)
from .metrics import perplexity
from .model import pretrain_backbone
from .model_io import save_backbone, save_generator
from .sampling import synthesize_dataset
from .tasks import make_synthetic_task, oracle_label_accuracy
from .tuning import disc_loss, token_weights, tune_generators
from .data import write_dataset


class StageError(RuntimeError):
    """A pipeline stage failed for one seed."""


def _epoch_mean(history: list[dict], key: str, epoch: int) -> float | None:
    vals = [h[key] for h in history if h["epoch"] == epoch and h[key] is not None]
    return float(np.mean(vals)) if vals else None


def run_seed(cfg: dict, seed: int, out_dir: Path | None = None) -> dict:
    """All stages for one seed; returns the per-seed report entry."""
    exp = cfg["experiment"]
    spec = task_spec(cfg, seed)
    bundle = make_synthetic_task(spec, exp["k_train"], exp["dev_size"],
                                 exp["test_size"], exp["corpus_size"])
    mcfg = model_config(cfg, spec.vocab_size)
    backbone = pretrain_backbone(bundle.corpus, bundle.vocab, mcfg,
                                 steps=cfg["pretrain"]["steps"], seed=seed,
                                 lr=cfg["pretrain"]["lr"],
                                 batch_size=cfg["pretrain"]["batch_size"])
    if out_dir is not None:
        save_backbone(out_dir / f"backbone_seed{seed}.ckpt", backbone)
        write_dataset(out_dir / f"train_seed{seed}.jsonl", bundle.train, bundle.vocab)
        write_dataset(out_dir / f"dev_seed{seed}.jsonl", bundle.dev, bundle.vocab)
        write_dataset(out_dir / f"test_seed{seed}.jsonl", bundle.test, bundle.vocab)

    gen_cfgs = generation_configs(cfg, bundle)
    entry = {"seed": seed, "error": None, "objectives": {}}
    losses_rows = []
    weight_dumps = []
    for objective in exp["objectives"]:
        tcfg = tuning_config(cfg, objective, seed)
        bank, wn, history = tune_generators(backbone, bundle.train,
                                            spec.num_labels, tcfg,
                                            seed_phrases=bundle.seed_phrases)
        for h in history:
            losses_rows.append([seed, objective, h["step"], h["epoch"],
                                h["wgen"], h["gen"], h["disc"]])
        gen_data = synthesize_dataset(backbone, bank, gen_cfgs, bundle.corpus,
                                      exp["n_per_label"], seed)
        obj_entry = {
            "gen_accuracy": oracle_label_accuracy(gen_data, bundle.oracle),
            "perplexity": float(np.mean([
                perplexity(backbone, bank, l,
                           [s for s in bundle.test if s.label == l])
                for l in range(spec.num_labels)])),
            "wgen_first_epoch": _epoch_mean(history, "wgen", 0),
            "wgen_last_epoch": _epoch_mean(history, "wgen", tcfg.epochs - 1),
            "classifier": None,
        }
        if objective == "w-gen" and wn is not None:
            for seq in bundle.train:
                _, vals = disc_loss(backbone, bank, seq)
                w = token_weights(wn, vals)
                toks = [bundle.vocab.token(seq.tokens[j])
                        for j in seq.included_positions()]
                weight_dumps.append({
                    "seed": seed, "sequence_id": seq.uid, "label": seq.label,
                    "tokens": toks,
                    "disc_values": [float(x) for x in vals],
                    "weights": [float(x) for x in w],
                })
        if out_dir is not None:
            save_generator(out_dir / f"generator_{objective}_seed{seed}.ckpt",
                           backbone, bank,
                           weight_net_params=None if wn is None else wn.params,
                           meta={"objective": objective, "seed": seed})
            write_dataset(out_dir / f"gen_{objective}_seed{seed}.jsonl",
                          gen_data, bundle.vocab, source="generated")
        if objective in exp["classifier_objectives"]:
            ccfg = classifier_config(cfg, seed)
            clf, stage1_clf, chist = train_classifier(
                backbone, bundle.train, bundle.dev, gen_data, ccfg,
                spec.num_labels)
            obj_entry["classifier"] = {
                "stage1_test": evaluate_classifier(stage1_clf, bundle.test),
                "final_test": evaluate_classifier(clf, bundle.test),
                "stage1_chosen_arm": chist["stage1"]["chosen"],
                "stage2_final_retained": len(chist["stage2"].get("final_retained", []))
                if chist["stage2"].get("final_retained") is not None else None,
            }
        entry["objectives"][objective] = obj_entry
    entry["_losses_rows"] = losses_rows
    entry["_weight_dumps"] = weight_dumps
    return entry


def _aggregate(seed_entries: list[dict], objectives: list[str]) -> dict:
    def stats(values):
        arr = np.asarray(values, dtype=np.float64)
        return {"mean": float(arr.mean()), "std": float(arr.std())}

    agg = {}
    for objective in objectives:
        rows = [e["objectives"][objective] for e in seed_entries
                if e["error"] is None and objective in e["objectives"]]
        if not rows:
            agg[objective] = None
            continue
        entry = {
            "seeds_used": len(rows),
            "gen_accuracy": stats([r["gen_accuracy"] for r in rows]),
            "perplexity": stats([r["perplexity"] for r in rows]),
        }
        clf_rows = [r["classifier"] for r in rows if r["classifier"] is not None]
        if clf_rows:
            entry["classifier_accuracy"] = stats(
                [c["final_test"]["accuracy"] for c in clf_rows])
            entry["stage1_accuracy"] = stats(
                [c["stage1_test"]["accuracy"] for c in clf_rows])
        agg[objective] = entry
    return agg


def run_pipeline(cfg: dict, out_dir=None) -> dict:
    """Run every seed and objective; aggregate; optionally write artifacts.

    A failing stage aborts only its seed; the error is recorded and the
    other seeds continue.
    """
    out_path = None
    if out_dir is not None:
        out_path = Path(out_dir)
        out_path.mkdir(parents=True, exist_ok=True)
    seeds = list(cfg["experiment"]["seeds"])
    entries = []
    for seed in seeds:
        try:
            entries.append(run_seed(cfg, int(seed), out_dir=out_path))
        except Exception as e:  # noqa: BLE001 - per-seed isolation is the contract
            entries.append({"seed": int(seed), "error": f"{type(e).__name__}: {e}",
                            "objectives": {}, "_losses_rows": [],
                            "_weight_dumps": []})
    losses_rows = [r for e in entries for r in e.pop("_losses_rows")]
    weight_dumps = [w for e in entries for w in e.pop("_weight_dumps")]
    report = {
        "version": __version__,
        "config": cfg,
        "seeds": entries,
        "aggregate": _aggregate(entries, list(cfg["experiment"]["objectives"])),
        "created_at": datetime.now(timezone.utc).isoformat(),
    }
    if out_path is not None:
        write_report(report, losses_rows, weight_dumps, out_path)
    report["_losses_rows"] = losses_rows
    report["_weight_dumps"] = weight_dumps
    return report


def report_json(report: dict) -> str:
    clean = {k: v for k, v in report.items() if not k.startswith("_")}
    return json.dumps(clean, sort_keys=True, indent=2) + "\n"


def write_report(report: dict, losses_rows: list, weight_dumps: list,
                 out_path: Path) -> None:
    (out_path / "report.json").write_text(report_json(report), encoding="utf-8")
    with open(out_path / "losses.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["seed", "objective", "step", "epoch", "wgen", "gen", "disc"])
        for row in losses_rows:
            writer.writerow(["" if x is None else x for x in row])
    (out_path / "weights.json").write_text(
        json.dumps(weight_dumps, sort_keys=True, indent=2) + "\n", encoding="utf-8")
