"""Calibration v2: effect of weight-net lr and combine weight."""
import sys, time
import numpy as np
from genaug.metrics import perplexity
from genaug.model import ModelConfig, pretrain_backbone
from genaug.sampling import GenerationConfig, synthesize_dataset
from genaug.tasks import SyntheticTaskSpec, make_synthetic_task, oracle_label_accuracy
from genaug.tuning import TuningConfig, tune_generators, token_weights, disc_loss

for seed in (0, 1, 2):
    spec = SyntheticTaskSpec(seed=seed)
    bundle = make_synthetic_task(spec, 16, 32, 200, 1000)
    cfg = ModelConfig(vocab_size=spec.vocab_size, max_len=64)
    bb = pretrain_backbone(bundle.corpus, bundle.vocab, cfg, steps=600, seed=seed)
    runs = [
        ("gen", {}),
        ("w-gen b=1e-2", {"objective": "w-gen"}),
        ("w-gen b=30", {"objective": "w-gen", "weight_net_lr": 30.0}),
        ("w-gen b=100", {"objective": "w-gen", "weight_net_lr": 100.0}),
        ("w-gen b=300", {"objective": "w-gen", "weight_net_lr": 300.0}),
        ("g+d mu=1", {"objective": "gen+disc"}),
        ("g+d mu=25", {"objective": "gen+disc", "combine_weight": 25.0}),
        ("g+d mu=100", {"objective": "gen+disc", "combine_weight": 100.0}),
    ]
    for name, kw in runs:
        kw = {"objective": "gen", **kw}
        tcfg = TuningConfig(epochs=20, seed=seed, **kw)
        t0 = time.perf_counter()
        bank, wn, hist = tune_generators(bb, bundle.train, 2, tcfg, seed_phrases=bundle.seed_phrases)
        ppl = float(np.mean([perplexity(bb, bank, l, [s for s in bundle.test if s.label == l]) for l in range(2)]))
        gcfg = GenerationConfig(temperature=1.0, start_tokens=bundle.start_tokens, start_policy="common", max_new_tokens=20)
        gen = synthesize_dataset(bb, bank, gcfg, bundle.corpus, 150, seed)
        acc = oracle_label_accuracy(gen, bundle.oracle)
        extra = ""
        if tcfg.objective == "w-gen":
            sc, vals = disc_loss(bb, bank, bundle.train[0])
            w = token_weights(wn, vals)
            extra = f" wspread {w.max()/w.min():.2f}"
        print(f"[seed {seed}] {name:13s} acc {acc:.3f} ppl {ppl:6.2f} disc {hist[-1]['disc']:.4f}{extra} ({time.perf_counter()-t0:.0f}s)", flush=True)
