"""Versioned ``.npz`` checkpoints: config, parameters, Adam moments, epoch counter."""
from __future__ import annotations

import json

import numpy as np

from .optim import AdamState
from .trainer import TrainConfig

FORMAT_VERSION = 1


def save_checkpoint(path, cfg: TrainConfig, params: dict, opt: AdamState, epoch: int) -> None:
    meta = {
        "format_version": FORMAT_VERSION,
        "config": cfg.to_dict(),
        "epoch": int(epoch),
        "adam": {"learning_rate": opt.learning_rate, "beta1": opt.beta1, "beta2": opt.beta2,
                 "eps": opt.eps, "step": opt.step},
        "param_names": sorted(params),
    }
    arrays = {"meta": np.array(json.dumps(meta, sort_keys=True))}
    for name in sorted(params):
        arrays[f"param/{name}"] = params[name]
        arrays[f"adam_m/{name}"] = opt.m[name]
        arrays[f"adam_u/{name}"] = opt.u[name]
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[TrainConfig, dict, AdamState, int]:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format {meta.get('format_version')!r}")
        names = meta["param_names"]
        params = {n: z[f"param/{n}"].copy() for n in names}
        opt = AdamState(**meta["adam"])
        opt.m = {n: z[f"adam_m/{n}"].copy() for n in names}
        opt.u = {n: z[f"adam_u/{n}"].copy() for n in names}
    return TrainConfig(**meta["config"]), params, opt, meta["epoch"]
