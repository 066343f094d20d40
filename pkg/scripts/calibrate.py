"""Calibration sweep: objectives x temperature on the default synthetic task."""

import sys
import time

import numpy as np

from genaug.metrics import perplexity
from genaug.model import ModelConfig, pretrain_backbone
from genaug.sampling import GenerationConfig, synthesize_dataset
from genaug.tasks import SyntheticTaskSpec, make_synthetic_task, oracle_label_accuracy
from genaug.tuning import TuningConfig, tune_generators

seeds = [0, 1, 2]
pretrain_steps = int(sys.argv[1]) if len(sys.argv) > 1 else 600
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 20

for seed in seeds:
    spec = SyntheticTaskSpec(seed=seed)
    bundle = make_synthetic_task(spec, 16, 32, 200, 1000)
    cfg = ModelConfig(vocab_size=spec.vocab_size, max_len=64)
    t0 = time.perf_counter()
    bb = pretrain_backbone(bundle.corpus, bundle.vocab, cfg, steps=pretrain_steps, seed=seed)
    print(f"[seed {seed}] pretrain {pretrain_steps} steps {time.perf_counter()-t0:.0f}s", flush=True)
    for objective in ("w-gen", "gen", "gen+disc"):
        tcfg = TuningConfig(epochs=epochs, objective=objective, seed=seed)
        t0 = time.perf_counter()
        bank, wn, hist = tune_generators(bb, bundle.train, 2, tcfg,
                                         seed_phrases=bundle.seed_phrases)
        dt = time.perf_counter() - t0
        ppl = float(np.mean([perplexity(bb, bank, l, [s for s in bundle.test if s.label == l])
                             for l in range(2)]))
        row = [f"[seed {seed}] {objective:9s} tune {dt:4.0f}s ppl {ppl:6.2f}"]
        for tau in (0.5, 1.0):
            gcfg = GenerationConfig(temperature=tau, start_tokens=bundle.start_tokens,
                                    start_policy="common", max_new_tokens=20)
            gen = synthesize_dataset(bb, bank, gcfg, bundle.corpus, 100, seed)
            acc = oracle_label_accuracy(gen, bundle.oracle)
            row.append(f"acc(t={tau})={acc:.3f}")
        hvals = [h["disc"] for h in hist]
        row.append(f"disc {hvals[0]:.4f}->{hvals[-1]:.4f}")
        if objective == "w-gen":
            w0 = [h["wgen"] for h in hist[:16]]
            w1 = [h["wgen"] for h in hist[-16:]]
            row.append(f"wgen {np.mean(w0):.3f}->{np.mean(w1):.3f}")
        print("  ".join(row), flush=True)
