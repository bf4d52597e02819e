"""Flat ``section.key = value`` engine configuration.

One plain-text format for everything the CLI can tune: model shape, training
schedule, per-kernel execution knobs (sddmm.* / spmm.*), splitting,
evaluation, benchmarking, and analysis.  Unknown keys are rejected;
serialization is canonical (sorted keys, ``key = value`` lines) so a parsed
config re-serializes byte-for-byte identically.
"""

from __future__ import annotations

import math

from .kernels import EngineOpts, KernelOptions
from .models import ModelConfig
from .train import TrainConfig


class ConfigError(Exception):
    pass


def _parse_bool(text):
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


# key -> (default, parser)
SCHEMA = {
    "model.kind": ("lightgcn", str),
    "model.layers": (2, int),
    "model.dim": (64, int),
    "model.combine": ("auto", str),          # auto | concat | mean
    "model.normalize_by_degree": (False, _parse_bool),
    "train.base_batch": (1000, int),
    "train.base_lr": (1e-4, float),
    "train.large_batch": (150000, int),
    "train.warmup_epochs": (2, int),
    "train.warmup_divisor": (10, int),
    "train.epochs": (100, int),
    "train.neg_per_pos": (1, int),
    "train.seed": (0, int),
    "train.l2_coeff": (1e-4, float),
    "train.optimizer": ("adam", str),
    "train.lr_scaling": ("linear", str),
    "train.eval_every": (0, int),
    "train.checkpoint_every": (0, int),
    "split.fraction": (0.9, float),
    "split.seed": (0, int),
    "sddmm.workers": (0, int),               # 0 = auto (cpu count)
    "sddmm.write_mode": ("non_temporal", str),
    "spmm.workers": (0, int),
    "spmm.write_mode": ("normal", str),
    "eval.k": (20, int),
    "eval.sampling_factor": (0, int),        # 0 = no sampling
    "bench.region_bytes": (64 * 1024 * 1024, int),
    "bench.repetitions": (5, int),
    "bench.cooldown_ms": (100, int),
    "bench.seed": (0, int),
    "analyze.workers": (2, int),
    "analyze.batch": (256, int),
    "analyze.layers": (2, int),
    "analyze.sampling": (0, int),
    "analyze.budget_bytes": (0, int),        # 0 = skip the budget search
    "analyze.seed": (0, int),
}


class EngineConfig:
    def __init__(self, values=None):
        self.values = {k: default for k, (default, _) in SCHEMA.items()}
        if values:
            for key, value in values.items():
                self.set(key, value)

    def get(self, key):
        if key not in self.values:
            raise ConfigError(f"unknown config key: {key!r}")
        return self.values[key]

    def set(self, key, value):
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key: {key!r}")
        _, parser = SCHEMA[key]
        if isinstance(value, str):
            try:
                value = parser(value)
            except ConfigError:
                raise
            except ValueError:
                raise ConfigError(f"bad value for {key}: {value!r}") from None
        self.values[key] = value

    def serialize(self):
        return "".join(f"{k} = {_fmt(self.values[k])}\n"
                       for k in sorted(self.values))

    def save(self, path):
        with open(path, "w") as f:
            f.write(self.serialize())

    # -- typed views ----------------------------------------------------------

    def model_config(self):
        combine = self.get("model.combine")
        return ModelConfig(
            model=self.get("model.kind"),
            num_layers=self.get("model.layers"),
            embed_dim=self.get("model.dim"),
            combine=None if combine == "auto" else combine,
            normalize_by_degree=self.get("model.normalize_by_degree"))

    def train_config(self):
        return TrainConfig(
            base_batch=self.get("train.base_batch"),
            base_lr=self.get("train.base_lr"),
            large_batch=self.get("train.large_batch"),
            warmup_epochs=self.get("train.warmup_epochs"),
            warmup_divisor=self.get("train.warmup_divisor"),
            epochs=self.get("train.epochs"),
            neg_per_pos=self.get("train.neg_per_pos"),
            seed=self.get("train.seed"),
            l2_coeff=self.get("train.l2_coeff"),
            optimizer=self.get("train.optimizer"),
            lr_scaling=self.get("train.lr_scaling"),
            eval_every=self.get("train.eval_every"),
            checkpoint_every=self.get("train.checkpoint_every"))

    def kernel_opts(self):
        def one(prefix, default_mode):
            workers = self.get(f"{prefix}.workers")
            mode = self.get(f"{prefix}.write_mode")
            if mode not in ("normal", "non_temporal"):
                raise ConfigError(f"{prefix}.write_mode must be normal or "
                                  f"non_temporal, got {mode!r}")
            return KernelOptions(workers=workers if workers > 0 else None,
                                 write_mode=mode)
        return EngineOpts(sddmm=one("sddmm", "non_temporal"),
                          spmm=one("spmm", "normal"))

    def sampling_factor(self):
        s = self.get("eval.sampling_factor")
        return math.inf if s <= 0 else s


def parse_config(text, base=None):
    cfg = base if base is not None else EngineConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', "
                              f"got {stripped!r}")
        key, _, value = stripped.partition("=")
        cfg.set(key.strip(), value.strip())
    return cfg


def load_config(path, base=None):
    with open(path) as f:
        return parse_config(f.read(), base)
