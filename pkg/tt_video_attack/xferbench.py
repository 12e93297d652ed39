"""
Transfer experiments: pick an eval set every model gets right, craft adversarial clips on each
white-box model, and measure how often they fool every model.
"""
import hashlib
import os
import time
from collections import OrderedDict, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import scipy

import tt_video_attack.config
from tt_video_attack.config import BLACK_BOX, WHITE_BOX
from tt_video_attack.container import canonical_json
from tt_video_attack.errors import ConfigError, NumericFault, ProtocolError
from tt_video_attack.gradcore.graph import ComputeGraph
from tt_video_attack.logger import LOGGER as logger, log_progress
from tt_video_attack.modelzoo import load_checkpoint, model_from_checkpoint, predict, predict_batch
from tt_video_attack.report import Report, TransferMatrix, TransferRow, emit_report
from tt_video_attack.synthvid import EVAL, Dataset, LabeledClip
from tt_video_attack.synthvid import load as load_dataset
from tt_video_attack.synthvid import save as save_dataset
from tt_video_attack.temppattern import model_correlation, shift_loss_profile
from tt_video_attack.ttattack import AdversarialResult, AttackConfig, preset, tt_attack

VERSION = "0.1.0"

EVAL_SET_NOTE = (
    "Eval set: up to {n} clips drawn class-balanced from clips every model classifies correctly, "
    "instead of one clip per class."
)


@dataclass(frozen=True)
class ModelEntry:
    model_id: str
    path: str
    roles: Tuple[str, ...]


@dataclass(frozen=True)
class Ablations:
    shift_lengths: Tuple[int, ...] = ()
    weight_kinds: Tuple[str, ...] = ()
    strategies: Tuple[str, ...] = ()
    iterations: Tuple[int, ...] = (1, 10)


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str
    models: Tuple[ModelEntry, ...]
    attacks: Tuple[AttackConfig, ...]
    ablations: Ablations = Ablations()
    correlation_methods: Tuple[str, ...] = ()
    shift_loss: int = 0
    eval_size: int = 64
    seed: int = 0
    workers: int = 1
    precision: str = "float64"
    output_dir: str = "out"

    @classmethod
    def from_dict(cls, values: Dict) -> "ExperimentConfig":
        """Build from a validated, path-resolved config dict (see `tt_video_attack.config.load`)."""
        attacks = []
        for record in values["attacks"]:
            record = dict(record)
            record.setdefault("strategy_seed", values["seed"])
            name = record.pop("name")
            preset_name = record.pop("preset", None)
            if preset_name:
                attacks.append(preset(preset_name, **record, name=name))
            else:
                attacks.append(AttackConfig(name=name, **record))
        ablations = values["ablations"]
        return cls(
            dataset=values["dataset"],
            models=tuple(ModelEntry(m["id"], m["path"], tuple(m["roles"])) for m in values["models"]),
            attacks=tuple(attacks),
            ablations=Ablations(
                tuple(ablations["shift_lengths"]),
                tuple(ablations["weight_kinds"]),
                tuple(ablations["strategies"]),
                tuple(ablations["iterations"]),
            ),
            correlation_methods=tuple(values["analyses"]["correlation_methods"]),
            shift_loss=values["analyses"]["shift_loss"],
            eval_size=values["eval_size"],
            seed=values["seed"],
            workers=values["workers"],
            precision=values["precision"],
            output_dir=values["output_dir"],
        )

    @classmethod
    def load(cls, filename: str, seed: Optional[int] = None) -> "ExperimentConfig":
        return cls.from_dict(tt_video_attack.config.load(filename, seed))

    def ids_with_role(self, role: str) -> Tuple[str, ...]:
        return tuple(m.model_id for m in self.models if role in m.roles)

    def validate(self, transfer: bool = True) -> "ExperimentConfig":
        if transfer and (not self.ids_with_role(WHITE_BOX) or not self.ids_with_role(BLACK_BOX)):
            raise ConfigError("An experiment needs at least one white-box and one black-box model")
        for attack in self.attacks:
            attack.validate()
        return self

    def planned_attacks(self, transfer: bool = True) -> "OrderedDict[str, List[AttackConfig]]":
        """Attack lists per matrix: the transfer grid, then every ablation sweep."""
        plan: "OrderedDict[str, List[AttackConfig]]" = OrderedDict(transfer=list(self.attacks))
        if transfer:
            plan.update(ablation_attacks(self.ablations, preset("tt-bim", strategy_seed=self.seed)))
        return plan

    def check_paths(self) -> None:
        missing = [path for path in [self.dataset] + [m.path for m in self.models] if not os.path.isfile(path)]
        if missing:
            raise ConfigError(f"Missing input files: {missing}")

    def to_dict(self) -> Dict:
        return {
            "dataset": os.path.basename(self.dataset),
            "models": [
                {"id": m.model_id, "path": os.path.basename(m.path), "roles": list(m.roles)} for m in self.models
            ],
            "attacks": [a.to_dict() for a in self.attacks],
            "ablations": {
                "shift_lengths": list(self.ablations.shift_lengths),
                "weight_kinds": list(self.ablations.weight_kinds),
                "strategies": list(self.ablations.strategies),
                "iterations": list(self.ablations.iterations),
            },
            "analyses": {"correlation_methods": list(self.correlation_methods), "shift_loss": self.shift_loss},
            "eval_size": self.eval_size,
            "seed": self.seed,
            "precision": self.precision,
        }

    def config_hash(self) -> str:
        """Hash of everything that can change report numbers; worker count and output paths excluded."""
        return hashlib.sha256(canonical_json(self.to_dict()).encode("utf-8")).hexdigest()[:16]


def select_eval_set(
    models: Mapping[str, ComputeGraph], clips: Sequence[LabeledClip], n: int, seed: int
) -> List[LabeledClip]:
    """
    Seeded, class-balanced sample of `n` clips that every model classifies correctly.

    Classes are visited round-robin in label order, each drawing from its own shuffled pool,
    so counts differ by at most one while every class still has clips left.

    Raises:
        ProtocolError: fewer than `n` eligible clips; names the model that gets the fewest right.
    """
    if n == 0:
        return []
    correct = {model_id: [predict(model, c.clip) == c.label for c in clips] for model_id, model in models.items()}
    for model in models.values():
        model.clear_cache()
    eligible = [c for index, c in enumerate(clips) if all(flags[index] for flags in correct.values())]
    if len(eligible) < n:
        weakest = min(correct, key=lambda model_id: (sum(correct[model_id]), model_id))
        raise ProtocolError(
            f"Only {len(eligible)} clips are classified correctly by all models, {n} requested; "
            f"weakest model is {weakest} with {sum(correct[weakest])}/{len(clips)} correct"
        )

    rng = np.random.default_rng(seed)
    pools = defaultdict(list)
    for c in eligible:
        pools[c.label].append(c)
    queues = OrderedDict(
        (label, [pools[label][i] for i in rng.permutation(len(pools[label]))]) for label in sorted(pools)
    )
    selected: List[LabeledClip] = []
    while len(selected) < n:
        for queue in queues.values():
            if queue and len(selected) < n:
                selected.append(queue.pop(0))
    return selected


def compute_asr(results: Sequence[AdversarialResult], target_model: ComputeGraph) -> float:
    """Fraction of adversarial clips that `target_model` does not assign their true label."""
    if not results:
        raise ProtocolError("ASR is undefined for an empty result list")
    frames = np.stack([r.adversarial.frames for r in results])
    labels = np.array([r.label for r in results])
    return float(np.mean(predict_batch(target_model, frames) != labels))


def _chunks(items: Sequence, count: int) -> List[Sequence]:
    size = -(-len(items) // count) if items else 0
    return [items[i:i + size] for i in range(0, len(items), size)] if size else []


def attack_clips(model: ComputeGraph, clips: Sequence[LabeledClip], cfg: AttackConfig,
                 workers: int = 1) -> Tuple[List[AdversarialResult], List[str]]:
    """
    Attack every clip on its own clone of `model`. Results come back in clip order, and clips
    that hit a numeric fault are left out and returned by id.
    """

    def run(chunk: Sequence[LabeledClip], graph: ComputeGraph) -> List[Tuple[str, Optional[AdversarialResult]]]:
        out = []
        for labeled in chunk:
            try:
                out.append((labeled.clip_id, tt_attack(graph, labeled.clip, labeled.label, cfg, labeled.clip_id)))
            except NumericFault as e:
                logger.warning(f"Excluding clip {labeled.clip_id} from {cfg.name} on {model.name}: {e}")
                out.append((labeled.clip_id, None))
        return out

    chunks = _chunks(list(clips), max(1, workers))
    graphs = [model.clone() for _ in chunks]
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        outcomes = [item for chunk in pool.map(run, chunks, graphs) for item in chunk]
    results = [result for _, result in outcomes if result is not None]
    excluded = [clip_id for clip_id, result in outcomes if result is None]
    return results, excluded


def transfer_row(models: Mapping[str, ComputeGraph], white_box: str, clips: Sequence[LabeledClip],
                 cfg: AttackConfig, workers: int = 1) -> Tuple[TransferRow, List[AdversarialResult]]:
    results, excluded = attack_clips(models[white_box], clips, cfg, workers)
    asr = tuple(compute_asr(results, model) if results else None for model in models.values())
    row = TransferRow(white_box, cfg.name, cfg.config_hash(), len(clips), len(excluded), asr)
    logger.info(
        "{} on {}: {}".format(
            cfg.name,
            white_box,
            ", ".join(f"{m} {'n/a' if v is None else f'{v:.3f}'}" for m, v in zip(models, asr)),
        )
    )
    return row, results


def ablation_attacks(ablations: Ablations, base: AttackConfig) -> "OrderedDict[str, List[AttackConfig]]":
    """One attack list per ablated setting, each swept at every configured iteration count."""
    sweeps: "OrderedDict[str, List[AttackConfig]]" = OrderedDict()
    for iterations in ablations.iterations:
        stem = replace(base, iterations=iterations)
        if ablations.shift_lengths:
            sweeps.setdefault("ablation_shift_length", []).extend(
                replace(stem, name=f"tt-i{iterations}-l{length}", shift_length=length)
                for length in ablations.shift_lengths
            )
        if ablations.weight_kinds:
            sweeps.setdefault("ablation_weight_kind", []).extend(
                replace(stem, name=f"tt-i{iterations}-{kind}", weight_kind=kind) for kind in ablations.weight_kinds
            )
        if ablations.strategies:
            sweeps.setdefault("ablation_strategy", []).extend(
                replace(stem, name=f"tt-i{iterations}-{strategy}", strategy=strategy)
                for strategy in ablations.strategies
            )
    return sweeps


def load_models(cfg: ExperimentConfig) -> "OrderedDict[str, ComputeGraph]":
    models: "OrderedDict[str, ComputeGraph]" = OrderedDict()
    for entry in cfg.models:
        graph = model_from_checkpoint(load_checkpoint(entry.path), name=entry.model_id)
        models[entry.model_id] = graph if graph.precision == cfg.precision else graph.with_precision(cfg.precision)
    return models


def provenance(cfg: ExperimentConfig, eval_ids: Sequence[str]) -> Dict:
    return {
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "eval_clip_ids": list(eval_ids),
        "versions": {"tt_video_attack": VERSION, "numpy": np.__version__, "scipy": scipy.__version__},
    }


def prepare(cfg: ExperimentConfig, transfer: bool = True):
    """
    Validate, load everything and select the eval set; nothing is attacked yet. Every planned
    attack is checked against the clip length here, so a bad config fails before the first row.
    """
    cfg.validate(transfer)
    cfg.check_paths()
    dataset = load_dataset(cfg.dataset)
    models = load_models(cfg)
    frames = next(iter(models.values())).input_shape[0]
    for attacks in cfg.planned_attacks(transfer).values():
        for attack in attacks:
            attack.validate(frames)
    clips = select_eval_set(models, dataset.split(EVAL), cfg.eval_size, cfg.seed)
    logger.info(f"Selected {len(clips)} eval clips for {len(models)} models (seed {cfg.seed}).")
    return dataset, models, clips


def run_analyses(
    cfg: ExperimentConfig, models: Mapping[str, ComputeGraph], clips: Sequence[LabeledClip], report: Report
) -> None:
    if not clips:
        return
    for method in cfg.correlation_methods:
        report.correlations.append(model_correlation(models, clips, method))
    if cfg.shift_loss > 0:
        length = min(cfg.shift_loss, clips[0].clip.num_frames - 1)
        report.shift_loss.extend(
            shift_loss_profile(model, clips, length, model_id=model_id) for model_id, model in models.items()
        )


def _run_matrix(name: str, cfg: ExperimentConfig, models: Mapping[str, ComputeGraph], clips: Sequence[LabeledClip],
                attacks: Sequence[AttackConfig]) -> TransferMatrix:
    matrix = TransferMatrix(name, tuple(models), cfg.ids_with_role(BLACK_BOX), len(clips), cfg.seed)
    jobs = [(white_box, attack) for white_box in cfg.ids_with_role(WHITE_BOX) for attack in attacks]
    for done, (white_box, attack) in enumerate(jobs, 1):
        row, _ = transfer_row(models, white_box, clips, attack, cfg.workers)
        matrix.rows.append(row)
        log_progress(name, done, len(jobs), every=1)
    return matrix


def run_transfer_experiment(cfg: ExperimentConfig, output_dir: Optional[str] = None) -> Report:
    """
    Every (white-box model, attack) row of the transfer matrix, the ablation sweeps and the
    enabled analyses. The report is written to `output_dir` when one is given.
    """
    started = time.time()
    _, models, clips = prepare(cfg)
    report = Report(provenance(cfg, [c.clip_id for c in clips]), notes=[EVAL_SET_NOTE.format(n=cfg.eval_size)])

    plan = cfg.planned_attacks()
    report.transfer = _run_matrix("transfer", cfg, models, clips, plan.pop("transfer"))
    for name, attacks in plan.items():
        report.ablations[name] = _run_matrix(name, cfg, models, clips, attacks)
    excluded = sum(row.excluded for matrix in report.matrices() for row in matrix.rows)
    if excluded:
        report.notes.append(f"{excluded} attacked clips were excluded after numeric faults.")
    run_analyses(cfg, models, clips, report)

    report.wall_clock_seconds = time.time() - started
    if output_dir is not None:
        emit_report(report, output_dir)
    return report


def run_analysis_only(cfg: ExperimentConfig, output_dir: Optional[str] = None) -> Report:
    """Correlation matrices and shift-loss profiles without any attack."""
    started = time.time()
    _, models, clips = prepare(cfg, transfer=False)
    report = Report(provenance(cfg, [c.clip_id for c in clips]), notes=[EVAL_SET_NOTE.format(n=cfg.eval_size)])
    run_analyses(cfg, models, clips, report)
    report.wall_clock_seconds = time.time() - started
    if output_dir is not None:
        emit_report(report, output_dir)
    return report


def adversarial_dataset(results: Sequence[AdversarialResult], num_classes: int, white_box: str, cfg: AttackConfig,
                        seed: int, excluded: Sequence[str] = ()) -> Dataset:
    clips = [LabeledClip(r.adversarial, r.label, f"adv-{r.clip_id}", EVAL) for r in results]
    record = {
        "white_box": white_box,
        "attack": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "seed": seed,
        "clean_ids": [r.clip_id for r in results],
        "excluded_ids": list(excluded),
        "white_box_losses": [r.loss for r in results],
    }
    return Dataset(clips, num_classes, provenance=record)


def generate_adversarial(cfg: ExperimentConfig, output_dir: str) -> List[str]:
    """Craft and save one adversarial clip set per (white-box model, attack)."""
    cfg.validate(transfer=False)
    if not cfg.ids_with_role(WHITE_BOX):
        raise ConfigError("Generating adversarial clips needs at least one white-box model")
    dataset, models, clips = prepare(cfg, transfer=False)
    paths = []
    for white_box in cfg.ids_with_role(WHITE_BOX):
        for attack in cfg.attacks:
            results, excluded = attack_clips(models[white_box], clips, attack, cfg.workers)
            path = os.path.join(output_dir, f"{white_box}__{attack.name}.ttvc")
            save_dataset(adversarial_dataset(results, dataset.num_classes, white_box, attack, cfg.seed, excluded), path)
            paths.append(path)
    return paths
