"""Experiment configuration and run-directory plumbing.

A config is a JSON document of named blocks. Validation is strict: unknown
keys are rejected with their full field path, values are type- and
range-checked, and the canonical serialization's SHA-256 identifies every
artifact the run emits. Component seeds derive from the master seed XOR a
fixed per-component tag, so one master seed pins the whole pipeline.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import os
from pathlib import Path

from . import nn
from .data import (
    GRANULARITY_CLASS,
    GRANULARITY_CLIENT,
    GRANULARITY_SAMPLE,
    UnlearnRequest,
)
from .rl import PpoConfig

ENV_SEED = "SCALE_SEED"

# component seed tags (master XOR tag)
TAG_DATA = 0x0101
TAG_PARTITION = 0x0202
TAG_INIT = 0x0303
TAG_FEDERATION = 0x0404
TAG_REQUEST = 0x0505
TAG_PPO = 0x0606


class ConfigError(ValueError):
    pass


DEFAULT_CONFIG: dict = {
    "dataset": {
        "source": "synthetic",         # or "idx"
        "classes": 4,
        "dim": 16,
        "per_class": 100,
        "spread": 0.15,
        "images_path": "",
        "labels_path": "",
    },
    "model": {
        "arch": "mlp",                 # or "mini_cnn"
        "hidden": [64, 32],
    },
    "federation": {
        "n_clients": 8,
        "rounds": 30,
        "local_epochs": 2,
        "eta": 0.05,
        "clients_per_round": 8,
        "batch_size": 32,
        "dirichlet_alpha": 1.0,
    },
    "scale": {
        "lam": 0.5,
        "m_sel": None,                 # null -> ceil(L/3)
        "dist_scheme": "softmax",
        "groups_per_layer": 8,
        "deploy_steps": 32,
        "ppo": {
            "episodes": 200,
            "t_collect": 32,
            "epochs": 10,
            "clip_eps": 0.2,
            "discount": 0.99,
            "gae_lambda": 0.95,
            "actor_lr": 3e-4,
            "critic_lr": 3e-4,
            "batch_size": 15,  # tuned on the bundled synthetic scenario
            "entropy_coef": 0.01,
            "w_f": 0.7,
            "w_c": 0.3,
            "ratio_levels": 10,
            "sparsity_cap": 0.95,
            "hidden": 19,  # tuned on the bundled synthetic scenario
            "grad_clip": 0.5,
        },
    },
    "request": {
        "granularity": "client",
        "clients": [3],
        "class_set": [],
        "sample_fraction": 0.3,
    },
    "metrics": {
        "alpha_w": 1.0,
        "beta_w": 1.0,
        "secs_per_step": 0.25,
    },
    "baselines": {
        "grad_steps": 10,
        "grad_eta": 0.01,
    },
    "seeds": {
        "master": 42,
    },
}


def _type_name(v) -> str:
    return type(v).__name__


def _check_value(path: str, value, template) -> None:
    if template is None:
        # nullable int slot (m_sel)
        if value is not None and not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer or null")
        return
    if isinstance(template, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {_type_name(value)}")
        return
    if isinstance(template, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {_type_name(value)}")
        return
    if isinstance(template, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {_type_name(value)}")
        return
    if isinstance(template, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {_type_name(value)}")
        return
    if isinstance(template, list):
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list, got {_type_name(value)}")
        return
    raise ConfigError(f"{path}: unsupported template type")


def _merge(defaults: dict, user: dict, prefix: str = "") -> dict:
    out = {}
    for key, d_val in defaults.items():
        path = f"{prefix}{key}"
        if key not in user:
            out[key] = copy.deepcopy(d_val)
        elif isinstance(d_val, dict):
            if not isinstance(user[key], dict):
                raise ConfigError(f"{path}: expected an object")
            out[key] = _merge(d_val, user[key], prefix=f"{path}.")
        else:
            _check_value(path, user[key], d_val)
            out[key] = copy.deepcopy(user[key])
    for key in user:
        if key not in defaults:
            raise ConfigError(f"unknown key: {prefix}{key}")
    return out


def _validate_ranges(cfg: dict) -> None:
    ds = cfg["dataset"]
    if ds["source"] not in ("synthetic", "idx"):
        raise ConfigError("dataset.source: must be 'synthetic' or 'idx'")
    if ds["source"] == "synthetic":
        if ds["classes"] < 2 or ds["dim"] < 1 or ds["per_class"] < 1:
            raise ConfigError("dataset: classes >= 2, dim >= 1, per_class >= 1")
        if ds["spread"] < 0:
            raise ConfigError("dataset.spread: must be >= 0")
    else:
        if not ds["images_path"] or not ds["labels_path"]:
            raise ConfigError("dataset: idx source needs images_path and labels_path")
    if cfg["model"]["arch"] not in (nn.ARCH_MLP, nn.ARCH_MINI_CNN):
        raise ConfigError(f"model.arch: unknown architecture {cfg['model']['arch']!r}")
    if len(cfg["model"]["hidden"]) != 2 or any(
        not isinstance(h, int) or h < 1 for h in cfg["model"]["hidden"]
    ):
        raise ConfigError("model.hidden: expected two positive integers")
    fed = cfg["federation"]
    if fed["n_clients"] < 1 or fed["rounds"] < 0 or fed["local_epochs"] < 1:
        raise ConfigError("federation: n_clients >= 1, rounds >= 0, local_epochs >= 1")
    if fed["eta"] <= 0 or fed["batch_size"] < 1:
        raise ConfigError("federation: eta > 0 and batch_size >= 1")
    if not 1 <= fed["clients_per_round"] <= fed["n_clients"]:
        raise ConfigError("federation.clients_per_round: must be in [1, n_clients]")
    if fed["dirichlet_alpha"] <= 0:
        raise ConfigError("federation.dirichlet_alpha: must be > 0")
    sc = cfg["scale"]
    if not 0.0 <= sc["lam"] <= 1.0:
        raise ConfigError("scale.lam: must be in [0, 1]")
    if sc["m_sel"] is not None and sc["m_sel"] < 1:
        raise ConfigError("scale.m_sel: must be >= 1 or null")
    if sc["dist_scheme"] not in ("softmax", "abs"):
        raise ConfigError("scale.dist_scheme: must be 'softmax' or 'abs'")
    if sc["groups_per_layer"] < 1 or sc["deploy_steps"] < 1:
        raise ConfigError("scale: groups_per_layer >= 1 and deploy_steps >= 1")
    req = cfg["request"]
    if req["granularity"] not in (
        GRANULARITY_CLIENT, GRANULARITY_CLASS, GRANULARITY_SAMPLE
    ):
        raise ConfigError(f"request.granularity: unknown value {req['granularity']!r}")
    if not req["clients"]:
        raise ConfigError("request.clients: at least one client index")
    if any(not isinstance(c, int) or c < 0 for c in req["clients"]):
        raise ConfigError("request.clients: non-negative integers")
    if req["granularity"] == GRANULARITY_CLASS and not req["class_set"]:
        raise ConfigError("request.class_set: required for class unlearning")
    if req["granularity"] == GRANULARITY_SAMPLE and not 0 < req["sample_fraction"] <= 1:
        raise ConfigError("request.sample_fraction: must be in (0, 1]")
    met = cfg["metrics"]
    if met["alpha_w"] < 0 or met["beta_w"] < 0 or met["secs_per_step"] < 0:
        raise ConfigError("metrics: weights must be non-negative")
    bl = cfg["baselines"]
    if bl["grad_steps"] < 0 or bl["grad_eta"] <= 0:
        raise ConfigError("baselines: grad_steps >= 0 and grad_eta > 0")
    if cfg["seeds"]["master"] < 0:
        raise ConfigError("seeds.master: must be non-negative")
    # PpoConfig re-validates its own block
    ppo_config(cfg)


def validate_config(user: dict) -> dict:
    """Merge over defaults, reject unknown keys, range-check, return merged."""
    if not isinstance(user, dict):
        raise ConfigError("config root must be an object")
    merged = _merge(DEFAULT_CONFIG, user)
    env = os.environ.get(ENV_SEED)
    if env is not None:
        try:
            merged["seeds"]["master"] = int(env)
        except ValueError as err:
            raise ConfigError(f"{ENV_SEED} must be an integer") from err
    _validate_ranges(merged)
    return merged


def load_config(path: str | Path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}") from err
    return validate_config(raw)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()


def component_seed(master: int, tag: int) -> int:
    return (master ^ tag) & 0xFFFFFFFF


def ppo_config(cfg: dict) -> PpoConfig:
    block = dict(cfg["scale"]["ppo"])
    try:
        return PpoConfig(**block)
    except ValueError as err:
        raise ConfigError(f"scale.ppo: {err}") from err


def build_request(cfg: dict, seed: int | None = None) -> UnlearnRequest:
    req = cfg["request"]
    if seed is None:
        seed = component_seed(cfg["seeds"]["master"], TAG_REQUEST)
    return UnlearnRequest(
        granularity=req["granularity"],
        clients=tuple(req["clients"]),
        class_set=tuple(req["class_set"]),
        sample_fraction=float(req["sample_fraction"]),
        seed=seed,
    )


# --- run directory --------------------------------------------------------------


class RunDir:
    """Path conventions for one experiment run."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    # training phase
    @property
    def config_path(self) -> Path:
        return self.root / "config.json"

    @property
    def manifest_path(self) -> Path:
        return self.root / "manifest.json"

    @property
    def global_model_path(self) -> Path:
        return self.root / "global.model"

    @property
    def rounds_path(self) -> Path:
        return self.root / "rounds.csv"

    @property
    def partition_path(self) -> Path:
        return self.root / "partition.json"

    @property
    def history_dir(self) -> Path:
        return self.root / "history"

    def history_model_path(self, client: int) -> Path:
        return self.history_dir / f"client_{client}.model"

    @property
    def history_meta_path(self) -> Path:
        return self.history_dir / "meta.json"

    # unlearning phase
    @property
    def request_path(self) -> Path:
        return self.root / "request.json"

    def method_dir(self, method: str) -> Path:
        return self.root / f"unlearn_{method}"

    def unlearned_model_path(self, method: str) -> Path:
        return self.method_dir(method) / "unlearned.model"

    def metrics_path(self, method: str) -> Path:
        return self.method_dir(method) / "metrics.json"

    @property
    def comparison_path(self) -> Path:
        return self.root / "comparison.csv"

    def ensure(self) -> "RunDir":
        self.root.mkdir(parents=True, exist_ok=True)
        return self

    def write_config(self, cfg: dict) -> str:
        h = config_hash(cfg)
        payload = {"config": cfg, "config_hash": h}
        self.config_path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
        return h

    def read_config(self) -> tuple[dict, str]:
        if not self.config_path.exists():
            raise ConfigError(f"no config.json under {self.root}")
        payload = json.loads(self.config_path.read_text())
        cfg = payload["config"]
        h = config_hash(cfg)
        if h != payload.get("config_hash"):
            raise ConfigError("config.json hash mismatch; run directory corrupted")
        return cfg, h


def write_csv(path: Path, header: list[str], rows: list[list], config_hash: str) -> None:
    """CSV with a `# config_hash=` comment line ahead of the header."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def read_csv(path: Path) -> tuple[str, list[str], list[list[str]]]:
    """(config hash, header, rows) of a hash-stamped CSV."""
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if not first.startswith("# config_hash="):
            raise ConfigError(f"{path}: missing config hash stamp")
        h = first.split("=", 1)[1]
        r = csv.reader(fh)
        header = next(r)
        return h, header, [row for row in r]
