"""Checkpoint files: one JSON header line, then raw little-endian float64
tensor data in the header's declared order."""

import json

import numpy as np

from .autodiff import ParameterSet
from .data import Vocabulary
from .model import Backbone, ModelConfig, PrefixBank

MAGIC = "genaug-checkpoint"


def save_checkpoint(path, kind: str, config: dict, vocab_tokens: list[str],
                    params: ParameterSet, meta: dict | None = None) -> None:
    header = {
        "format": MAGIC,
        "version": 1,
        "kind": kind,
        "config": config,
        "vocab": list(vocab_tokens),
        "tensors": [
            {"name": n, "shape": list(params[n].shape),
             "trainable": params.is_trainable(n)}
            for n in params.names()
        ],
        "meta": meta or {},
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        f.write(b"\n")
        for n in params.names():
            f.write(np.ascontiguousarray(params.data(n), dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict, ParameterSet]:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        if header.get("format") != MAGIC:
            raise ValueError(f"{path}: not a {MAGIC} file")
        params = ParameterSet()
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = f.read(count * 8)
            if len(buf) != count * 8:
                raise ValueError(f"{path}: truncated tensor data for {spec['name']}")
            arr = np.frombuffer(buf, dtype="<f8").reshape(shape)
            params.add(spec["name"], arr.astype(np.float64), trainable=spec["trainable"])
    return header, params


def save_backbone(path, backbone: Backbone) -> None:
    save_checkpoint(path, "backbone", backbone.cfg.to_dict(),
                    backbone.vocab.tokens, backbone.params)


def load_backbone(path) -> Backbone:
    header, params = load_checkpoint(path)
    if header["kind"] != "backbone":
        raise ValueError(f"{path}: expected a backbone checkpoint, got {header['kind']!r}")
    cfg = ModelConfig(**header["config"])
    return Backbone(cfg, Vocabulary(header["vocab"]), params)


def save_generator(path, backbone: Backbone, prefixes: PrefixBank,
                   weight_net_params: ParameterSet | None = None,
                   meta: dict | None = None) -> None:
    """Prefix bank plus (optionally) the token-weighting net, one file."""
    params = ParameterSet()
    for n in prefixes.params.names():
        params.add(n, prefixes.params[n], trainable=prefixes.params.is_trainable(n))
    if weight_net_params is not None:
        for n in weight_net_params.names():
            params.add(f"wn.{n}", weight_net_params[n],
                       trainable=weight_net_params.is_trainable(n))
    info = dict(meta or {})
    info.update({"num_labels": prefixes.num_labels, "pair_mode": prefixes.pair_mode})
    save_checkpoint(path, "generator", backbone.cfg.to_dict(),
                    backbone.vocab.tokens, params, meta=info)


def load_generator(path) -> tuple[ModelConfig, PrefixBank, ParameterSet | None, dict]:
    header, params = load_checkpoint(path)
    if header["kind"] != "generator":
        raise ValueError(f"{path}: expected a generator checkpoint, got {header['kind']!r}")
    cfg = ModelConfig(**header["config"])
    meta = header["meta"]
    bank_params, wn_params = ParameterSet(), ParameterSet()
    for n in params.names():
        if n.startswith("wn."):
            wn_params.add(n[3:], params[n], trainable=params.is_trainable(n))
        else:
            bank_params.add(n, params[n], trainable=params.is_trainable(n))
    bank = PrefixBank(cfg, int(meta["num_labels"]), bool(meta["pair_mode"]), bank_params)
    return cfg, bank, (wn_params if wn_params.names() else None), meta
