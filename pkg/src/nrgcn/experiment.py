"""Experiment configuration and the precompute -> train -> evaluate pipeline."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attacks import AttackSpec
from .graph import Bundle, Graph, content_hash, load_bundle, row_normalize
from .model import TrainConfig, evaluate, init_params, train
from .precompute import CacheError, EmbeddingTensor, build_embedding_tensor, load_cache, save_cache
from .sampler import SamplingPlan

log = logging.getLogger(__name__)

MODEL_KEYS = {f.name for f in dataclasses.fields(TrainConfig)} - {"seed", "init_seed"}


@dataclass
class ExperimentConfig:
    bundle: str | None = None
    plan: SamplingPlan = field(default_factory=lambda: SamplingPlan(((1, 5, 3), (2, 5, 5))))
    model: dict = field(default_factory=dict)
    sampling_seed: int = 0
    init_seed: int = 0
    training_seed: int = 0
    num_seeds: int = 5
    normalize_features: bool = True
    attack: dict | None = None
    p2_values: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    out: str = "runs"
    cache_dir: str | None = None
    backend: str | None = None
    threads: int = 0
    deterministic: bool = False

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> "ExperimentConfig":
        d = dict(d)
        unknown = set(d) - {"bundle", "plan", "exact_hop", "model", "seeds", "num_seeds", "normalize_features",
                            "attack", "p2_values", "out", "cache_dir", "backend", "threads", "deterministic"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        if "plan" in d:
            kw["plan"] = SamplingPlan.from_config(d["plan"], bool(d.get("exact_hop", False)))
        model = dict(d.get("model", {}))
        bad = set(model) - MODEL_KEYS
        if bad:
            raise ValueError(f"unknown model keys: {sorted(bad)}")
        kw["model"] = model
        seeds = d.get("seeds", {})
        kw.update(sampling_seed=int(seeds.get("sampling", 0)), init_seed=int(seeds.get("init", 0)),
                  training_seed=int(seeds.get("training", 0)))
        for key in ("num_seeds", "normalize_features", "attack", "p2_values", "out", "cache_dir", "backend",
                    "threads", "deterministic"):
            if key in d:
                kw[key] = d[key]
        bundle = d.get("bundle")
        if bundle is not None and base_dir is not None and not Path(bundle).is_absolute():
            bundle = str((Path(base_dir) / bundle).resolve())
        kw["bundle"] = bundle
        return cls(**kw)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")), base_dir=path.parent)

    def to_dict(self) -> dict:
        return {
            "bundle": self.bundle, "plan": self.plan.to_config(), "exact_hop": self.plan.exact_hop,
            "model": {k: v for k, v in self.train_config(0).to_dict().items() if k in MODEL_KEYS},
            "seeds": {"sampling": self.sampling_seed, "init": self.init_seed, "training": self.training_seed},
            "num_seeds": self.num_seeds, "normalize_features": self.normalize_features, "attack": self.attack,
            "p2_values": self.p2_values, "out": self.out, "cache_dir": self.cache_dir, "backend": self.backend,
            "threads": self.threads, "deterministic": self.deterministic,
        }

    def seeds_for(self, run: int) -> dict:
        return {"sampling": self.sampling_seed + run, "init": self.init_seed + run,
                "training": self.training_seed + run}

    def train_config(self, run: int) -> TrainConfig:
        s = self.seeds_for(run)
        return TrainConfig(**{**self.model, "seed": s["training"], "init_seed": s["init"]})

    def attack_specs(self) -> list[AttackSpec]:
        a = dict(self.attack or {})
        budgets = a.get("T", [1])
        budgets = budgets if isinstance(budgets, list) else [budgets]
        modes = a.get("mode", "evasion")
        modes = modes if isinstance(modes, list) else [modes]
        return [AttackSpec(m, int(t), bool(a.get("insert_external", False)), int(a.get("seed", 0)))
                for m in modes for t in budgets]


def load_dataset(config: ExperimentConfig) -> Bundle:
    if not config.bundle:
        raise ValueError("config has no bundle path")
    bundle = load_bundle(config.bundle)
    if config.normalize_features:
        bundle.features = row_normalize(bundle.features)
    return bundle


def _cache_name(digest: str, plan: SamplingPlan, seed: int) -> str:
    key = hashlib.md5(json.dumps([plan.to_config(), plan.exact_hop]).encode()).hexdigest()[:10]
    return f"tensor-{digest[:12]}-{key}-s{seed}.nrgc"


def get_tensor(graph: Graph, features: np.ndarray, plan: SamplingPlan, seed: int, cache_dir=None,
               backend=None, num_threads: int = 0) -> tuple[EmbeddingTensor, dict]:
    """Build the embedding tensor, or reuse a matching cache in ``cache_dir``.

    Returns the tensor and ``{"seconds", "cache_hit", "path"}``.
    """
    digest = content_hash(graph, features)
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / _cache_name(digest, plan, seed)
        if path.is_file():
            t0 = time.perf_counter()
            try:
                tensor = load_cache(path, plan=plan, seed=seed, bundle_hash=digest)
                return tensor, {"seconds": time.perf_counter() - t0, "cache_hit": True, "path": str(path)}
            except CacheError as exc:
                log.warning("rebuilding embedding cache %s: %s", path, exc)
    t0 = time.perf_counter()
    tensor = build_embedding_tensor(graph, features, plan, seed=seed, backend=backend, num_threads=num_threads,
                                    bundle_hash=digest)
    seconds = time.perf_counter() - t0
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        save_cache(tensor, path)
    return tensor, {"seconds": seconds, "cache_hit": False, "path": None if path is None else str(path)}


@dataclass
class RunResult:
    seeds: dict
    params: object
    history: list[dict]
    train_acc: float
    val_acc: float
    test_acc: float
    precompute_seconds: float
    train_seconds: float


def run_once(bundle: Bundle, config: ExperimentConfig, run: int = 0, tensor: EmbeddingTensor | None = None,
             plan: SamplingPlan | None = None) -> RunResult:
    plan = plan or config.plan
    seeds = config.seeds_for(run)
    pre_seconds = 0.0
    if tensor is None:
        tensor, info = get_tensor(bundle.graph, bundle.features, plan, seeds["sampling"], config.cache_dir,
                                  config.backend, 1 if config.deterministic else config.threads)
        pre_seconds = info["seconds"]
    tc = config.train_config(run)
    params = init_params(bundle.feature_dim, tc.hidden, bundle.num_classes, plan.K + 1, tc.mlp_hidden,
                         seed=tc.init_seed)
    t0 = time.perf_counter()
    params, history = train(params, tensor, bundle.labels, bundle.splits, tc, plan)
    train_seconds = time.perf_counter() - t0
    accs = [evaluate(params, tensor, bundle.labels, m, plan) if len(m) else float("nan")
            for m in (bundle.splits.train, bundle.splits.val, bundle.splits.test)]
    return RunResult(seeds, params, history, *accs, pre_seconds, train_seconds)


def summarize(values) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def sweep_p2(bundle: Bundle, config: ExperimentConfig, p2_values) -> list[dict]:
    """Mean/std test accuracy over ``num_seeds`` runs for each hop-2 parent size."""
    if config.plan.K < 2:
        raise ValueError("P_2 sweep needs a plan with at least two hops")
    rows = []
    for p2 in p2_values:
        plan = config.plan.with_layer(2, P=int(p2))
        accs = [run_once(bundle, config, i, plan=plan).test_acc for i in range(config.num_seeds)]
        mean, std = summarize(accs)
        rows.append({"P_2": int(p2), "mean_accuracy": mean, "std": std, "accuracies": accs})
    return rows
