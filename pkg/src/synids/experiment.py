"""Desk-scale version of the training-size experiment.

Three image sets shaped like the original ones (two training sets of
different size and one held-out test set) are generated from synthetic
captures, scaled by a factor. A model is trained on each training set and
both are scored on the same test set.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from .capture import FEATURE_DIM
from .classifier import DEFAULT_ROUNDS
from .config import derive_seed, get_float, get_floats, get_int, get_list
from .descriptors import DEFAULT_PARAMS
from .evaluation import EvalReport, confusion
from .imaging import DDOS, LEGITIMATE, CanvasCalibration
from .pipeline import extract_all, predict_descriptors, render_packets, train_from_descriptors
from .projection import ProjectionBasis, default_basis
from .traffic_synth import DEFAULT_PROFILES, AttackSpec, ScenarioSpec, generate

log = logging.getLogger(__name__)

# legitimate / attack image counts of the full-size sets
FULL_SIZES = {
    "train_small": (1500, 500),
    "train_large": (3000, 1500),
    "test": (1000, 1000),
}
# request rates of the three recorded attacks
ATTACK_RATES = (15.90, 24.45, 31.20)
# desk-scale defaults: smaller canvas and vocabulary than the library
# defaults keep the 0.1-scale run within a few minutes on one core
EXPERIMENT_SIZE = 500
EXPERIMENT_CLUSTERS = 300
EXPERIMENT_CLIENTS = 20


@dataclass
class ExperimentConfig:
    scale: float = 0.1
    seed: int = 0
    window_s: float = 5.0
    size: int = EXPERIMENT_SIZE
    clusters: int = EXPERIMENT_CLUSTERS
    rounds: int = DEFAULT_ROUNDS
    jobs: int = 1
    background: List[str] = field(default_factory=lambda: ["http", "https", "ssh", "bittorrent"])
    attack_rates: Tuple[float, ...] = ATTACK_RATES
    attack_clients: int = EXPERIMENT_CLIENTS
    max_descriptors: int = DEFAULT_PARAMS.max_descriptors

    @classmethod
    def from_config(cls, cfg: Dict[str, str], **overrides) -> "ExperimentConfig":
        out = cls(
            scale=get_float(cfg, "experiment.scale", 0.1),
            seed=get_int(cfg, "seed", 0),
            window_s=get_float(cfg, "experiment.window_s", 5.0),
            size=get_int(cfg, "experiment.size", EXPERIMENT_SIZE),
            clusters=get_int(cfg, "experiment.clusters", EXPERIMENT_CLUSTERS),
            rounds=get_int(cfg, "experiment.rounds", DEFAULT_ROUNDS),
            background=get_list(cfg, "background.profiles", ["http", "https", "ssh", "bittorrent"]),
            attack_rates=tuple(get_floats(cfg, "attack.rates") or ATTACK_RATES),
            attack_clients=get_int(cfg, "attack.clients", EXPERIMENT_CLIENTS),
            max_descriptors=get_int(cfg, "experiment.max_descriptors", DEFAULT_PARAMS.max_descriptors),
        )
        return replace(out, **{k: v for k, v in overrides.items() if v is not None})

    def sizes(self) -> Dict[str, Tuple[int, int]]:
        return {name: (max(1, round(l * self.scale)), max(1, round(a * self.scale)))
                for name, (l, a) in FULL_SIZES.items()}


def _scenario(cfg: ExperimentConfig, seed: int, frames: int, rate: Optional[float]) -> ScenarioSpec:
    duration = frames * cfg.window_s
    attack = AttackSpec(enabled=rate is not None, start_s=0.0, end_s=duration,
                        request_rate_pps=rate or 0.0, client_count=cfg.attack_clients)
    profiles = [replace(DEFAULT_PROFILES[name]) for name in cfg.background]
    return ScenarioSpec(duration_s=duration, seed=seed, profiles=profiles, attack=attack)


def build_image_set(cfg: ExperimentConfig, name: str, basis: ProjectionBasis,
                    cal: CanvasCalibration) -> Tuple[List[np.ndarray], List[str]]:
    """Render one set: legitimate frames, then attack frames split over the rates."""
    n_legit, n_attack = cfg.sizes()[name]
    pixels: List[np.ndarray] = []
    labels: List[str] = []
    blocks = [(LEGITIMATE, n_legit, None)]
    share = np.array_split(np.arange(n_attack), len(cfg.attack_rates))
    blocks += [(DDOS, len(part), rate) for part, rate in zip(share, cfg.attack_rates) if len(part)]
    for i, (label, count, rate) in enumerate(blocks):
        spec = _scenario(cfg, derive_seed(cfg.seed, f"{name}:{i}"), count, rate)
        packets, truth = generate(spec)
        for frame in render_packets(packets, basis, cal, cfg.window_s, truth,
                                    start_us=spec.epoch_us, count=count):
            pixels.append(frame.pixels)
            labels.append(frame.label)
    return pixels, labels


@dataclass
class ExperimentResult:
    config: dict
    sizes: dict
    reports: Dict[str, EvalReport]
    timings: Dict[str, float]
    training: Dict[str, dict]

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "sizes": self.sizes,
            "results": {name: r.to_dict() for name, r in self.reports.items()},
            "timings_s": self.timings,
            "training": self.training,
        }

    def summary(self) -> str:
        lines = [f"{'training set':<12} {'legit':>6} {'ddos':>6} {'DR':>8} {'FPR':>8} {'CR':>8}"]
        for name, report in self.reports.items():
            n_l, n_a = self.sizes[name]
            lines.append(f"{name:<12} {n_l:>6} {n_a:>6} {100 * report.dr:7.2f}% "
                         f"{100 * report.fpr:7.2f}% {100 * report.cr:7.2f}%")
        return "\n".join(lines)


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    basis = default_basis(FEATURE_DIM)
    cal = CanvasCalibration.from_basis(basis, cfg.size)
    params = replace(DEFAULT_PARAMS, max_descriptors=cfg.max_descriptors)
    timings: Dict[str, float] = {}
    descs: Dict[str, List[np.ndarray]] = {}
    labels: Dict[str, List[str]] = {}
    for name in FULL_SIZES:
        t0 = time.perf_counter()
        pixels, labels[name] = build_image_set(cfg, name, basis, cal)
        t1 = time.perf_counter()
        descs[name] = extract_all(pixels, params, cfg.jobs)
        t2 = time.perf_counter()
        timings[f"{name}.render"] = t1 - t0
        timings[f"{name}.descriptors"] = t2 - t1
        log.info("%s: %d frames rendered in %.1fs, described in %.1fs",
                 name, len(pixels), t1 - t0, t2 - t1)
        del pixels

    reports: Dict[str, EvalReport] = {}
    training: Dict[str, dict] = {}
    for name in ("train_small", "train_large"):
        t0 = time.perf_counter()
        meta = {"window_s": cfg.window_s, "size": cfg.size, "max_descriptors": cfg.max_descriptors}
        model, train_log = train_from_descriptors(
            descs[name], labels[name], basis, cal, cfg.clusters, cfg.rounds,
            derive_seed(cfg.seed, f"train:{name}"), meta,
        )
        preds = predict_descriptors(model, descs["test"], cfg.jobs)
        timings[f"{name}.train_eval"] = time.perf_counter() - t0
        reports[name] = confusion(labels["test"], [p.label for p in preds],
                                  dataset={"name": "test", "trained_on": name},
                                  model=dict(model.metadata))
        training[name] = train_log.to_dict()
        log.info("%s: DR %.3f FPR %.3f CR %.3f", name, reports[name].dr,
                 reports[name].fpr, reports[name].cr)
    config = asdict(cfg)
    config["attack_rates"] = list(cfg.attack_rates)
    return ExperimentResult(config, {k: list(v) for k, v in cfg.sizes().items()},
                            reports, timings, training)
