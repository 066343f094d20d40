"""Experiment configuration: nested defaults, YAML overrides, typed builders.

A config file is a single YAML mapping with one section per stage; every
default is explicit in the report echo. Unknown keys fail loudly.
"""

import copy

import yaml

from .classifier import ClassifierConfig
from .model import ModelConfig
from .sampling import GenerationConfig
from .tasks import SyntheticTaskSpec, TaskBundle
from .tuning import TuningConfig


class ConfigError(ValueError):
    pass


DEFAULTS: dict = {
    "task": {
        "vocab_size": 64,
        "num_labels": 2,
        "n_shared": 40,
        "n_disc": 10,
        "insert_probs": [0.2, 0.2],
        "min_len": 8,
        "max_len": 16,
        "template_coherence": 0.9,
        "mode": "single",
    },
    "model": {
        "d_model": 64,
        "n_layers": 2,
        "n_heads": 4,
        "prefix_len": 8,
        "max_len": 64,
        "ffn_mult": 4,
    },
    "pretrain": {
        "steps": 600,
        "lr": 3e-3,
        "batch_size": 16,
    },
    "tuning": {
        "lookahead_lr": 2e-2,
        "weight_net_lr": 1e-2,
        "prefix_lr": 5e-3,
        "batch_size": 2,
        "epochs": 20,
        "combine_weight": 1.0,
        "weight_net_hidden": 100,
    },
    "generation": {
        "temperature": 1.0,
        "repetition_penalty": 1.1,
        "top_k": 10,
        "max_new_tokens": 24,
        "start_policy": "common",
        "start_tokens": [],
        "per_label": {},
    },
    "classifier": {
        "label_smooth": 0.15,
        "momentum": 0.9,
        "reg_weight": 20.0,
        "threshold": 0.8,
        "refresh_period": 20,
        "stage2_steps": 600,
        "stage2_lr": 1e-3,
        "stage2_batch": 8,
        "stage1_steps": 150,
        "stage1_lrs": [3e-3, 1e-3],
        "stage1_batches": [4, 8],
    },
    "experiment": {
        "k_train": 16,
        "dev_size": 32,
        "test_size": 200,
        "corpus_size": 2000,
        "n_per_label": 500,
        "seeds": [0, 1, 2, 3, 4],
        "objectives": ["w-gen", "gen", "gen+disc"],
        "classifier_objectives": ["w-gen"],
    },
}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key: {where}")
        if isinstance(base[key], dict) and key != "per_label":
            if not isinstance(value, dict):
                raise ConfigError(f"{where} must be a mapping")
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        with open(path, encoding="utf-8") as f:
            try:
                user = yaml.safe_load(f) or {}
            except yaml.YAMLError as e:
                raise ConfigError(f"{path}: {e}") from None
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        cfg = _merge(cfg, user)
    if overrides:
        cfg = _merge(cfg, overrides)
    return cfg


def _build(factory, section: str, kwargs: dict):
    try:
        return factory(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[{section}] {e}") from None


def task_spec(cfg: dict, seed: int) -> SyntheticTaskSpec:
    t = dict(cfg["task"])
    t["insert_probs"] = tuple(t["insert_probs"])
    return _build(SyntheticTaskSpec, "task", {**t, "seed": seed})


def model_config(cfg: dict, vocab_size: int) -> ModelConfig:
    return _build(ModelConfig, "model", {**cfg["model"], "vocab_size": vocab_size})


def tuning_config(cfg: dict, objective: str, seed: int) -> TuningConfig:
    return _build(TuningConfig, "tuning",
                  {**cfg["tuning"], "objective": objective, "seed": seed})


def classifier_config(cfg: dict, seed: int) -> ClassifierConfig:
    c = dict(cfg["classifier"])
    c["stage1_lrs"] = tuple(c["stage1_lrs"])
    c["stage1_batches"] = tuple(c["stage1_batches"])
    return _build(ClassifierConfig, "classifier", {**c, "seed": seed})


def generation_configs(cfg: dict, bundle: TaskBundle) -> dict[int, GenerationConfig]:
    """Per-label sampling configs.

    Pair tasks default to greedy decoding with the repetition penalty set
    per label (1.0 for the repetition-friendly label 0, 1.5 otherwise);
    single tasks use top-k temperature sampling. The "common" start policy
    draws from the task's label-indiscriminate token pool.
    """
    base = {k: v for k, v in cfg["generation"].items() if k != "per_label"}
    per_label = cfg["generation"]["per_label"] or {}
    mode = bundle.spec.mode
    out = {}
    for label in range(bundle.spec.num_labels):
        g = dict(base)
        g["mode"] = mode
        if mode == "pair":
            # pair defaults; per_label entries still override them
            g["temperature"] = 0.0
            g["start_policy"] = "corpus"
            g["repetition_penalty"] = 1.0 if label == 0 else 1.5
        over = per_label.get(label, per_label.get(str(label), {}))
        if not isinstance(over, dict):
            raise ConfigError("[generation] per_label entries must be mappings")
        for k, v in over.items():
            if k not in base:
                raise ConfigError(f"unknown config key: generation.per_label.{label}.{k}")
            g[k] = v
        if g["start_policy"] == "common":
            g["start_tokens"] = bundle.start_tokens
        g["samples_per_label"] = int(cfg["experiment"]["n_per_label"])
        out[label] = _build(GenerationConfig, "generation", g)
    return out
