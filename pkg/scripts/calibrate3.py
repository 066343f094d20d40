"""Calibration v3: aggressive weight-net lr, weight-disc correlation."""
import numpy as np, time
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
    runs = [("gen", {}, 20)]
    for beta in (1000.0, 3000.0, 10000.0):
        runs.append((f"w-gen b={beta:g}", {"objective": "w-gen", "weight_net_lr": beta}, 20))
    runs.append(("w-gen b=3000 e40", {"objective": "w-gen", "weight_net_lr": 3000.0}, 40))
    for name, kw, ep in runs:
        kw = {"objective": "gen", **kw}
        tcfg = TuningConfig(epochs=ep, seed=seed, **kw)
        t0 = time.perf_counter()
        bank, wn, hist = tune_generators(bb, bundle.train, 2, tcfg, seed_phrases=bundle.seed_phrases)
        ppl = float(np.mean([perplexity(bb, bank, l, [s for s in bundle.test if s.label == l]) for l in range(2)]))
        gcfg = GenerationConfig(temperature=1.0, start_tokens=bundle.start_tokens, start_policy="common", max_new_tokens=20)
        gen = synthesize_dataset(bb, bank, gcfg, bundle.corpus, 200, seed)
        acc = oracle_label_accuracy(gen, bundle.oracle)
        extra = ""
        if tcfg.objective == "w-gen":
            spreads, corrs = [], []
            for s in bundle.train[:8]:
                _, vals = disc_loss(bb, bank, s)
                w = token_weights(wn, vals)
                spreads.append(w.max() / w.min())
                if np.std(vals) > 1e-9:
                    corrs.append(np.corrcoef(vals, w)[0, 1])
            extra = f" spread {np.mean(spreads):.2f} corr(val,w) {np.mean(corrs):+.2f}"
        print(f"[seed {seed}] {name:17s} acc {acc:.3f} ppl {ppl:6.2f} disc {hist[-1]['disc']:.4f}{extra} ({time.perf_counter()-t0:.0f}s)", flush=True)
