"""Two-stage training on synthetic scenes: offline labelers, then the distilled online student."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import distill as D
from . import losses as L
from .grid import EMPTY, GridSpec, LabelGrid, RangePartition, shell_ids
from .metrics import RangeReport, range_report
from .model import ToyModel, backward, forward, n_features, sgd_step, standardize, voxel_features
from .synth import Scene, SceneParams, corrupt_geometry, gen_scene, scribblize

log = logging.getLogger(__name__)


# Hint noise of the training benchmark. At the scene default (0.2) the hint
# channel alone nearly determines every class, leaving nothing for dense
# pseudo labels or distillation to add.
BENCHMARK_HINT_NOISE = 0.5


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 150
    step_size: float = 0.05
    momentum: float = 0.9
    standardize: bool = True
    float32: bool = True
    seed: int = 0
    hidden: int = 32
    sem_weight: float = 1.0
    geo_weight: float = 1.0
    distill: D.DistillWeights = field(default_factory=D.DistillWeights)
    drop_rate: float = 0.3
    add_rate: float = 0.02
    scribble_rate: float = 0.135
    scene: SceneParams = field(default_factory=lambda: SceneParams(label_noise=BENCHMARK_HINT_NOISE))
    range_fractions: Tuple[float, float, float] = (0.25, 0.5, 1.0)

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not self.step_size > 0:
            raise ValueError("step_size must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if len(self.distill.w) != len(self.range_fractions):
            raise ValueError(f"{len(self.distill.w)} range weights for {len(self.range_fractions)} range shells")

    @property
    def partition(self) -> RangePartition:
        return RangePartition.for_spec(self.scene.spec, self.range_fractions)

    def with_seed(self, seed: int) -> "TrainConfig":
        return dataclasses.replace(self, seed=seed, scene=dataclasses.replace(self.scene, seed=seed))

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)


# -- config (de)serialization -----------------------------------------------------


class ConfigError(ValueError):
    """Malformed training configuration (unknown key, wrong type, invalid value)."""


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"config section {path or 'root'} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown config key(s) in {path or 'root'}: {', '.join(unknown)}")
    kw = {}
    for k, v in data.items():
        if cls is TrainConfig and k == "distill":
            v = _build(D.DistillWeights, v, "distill")
        elif cls is TrainConfig and k == "scene":
            v = _build(SceneParams, v, "scene")
        elif cls is SceneParams and k == "spec":
            v = _build(GridSpec, v, "scene.spec")
        elif cls is SceneParams and k == "objects":
            try:
                v = {name: tuple(int(t) for t in spec) for name, spec in v.items()}
            except (AttributeError, TypeError, ValueError):
                raise ConfigError("scene.objects must map kinds to [count, min, max]") from None
        elif isinstance(v, list):
            v = tuple(v)
        kw[k] = v
    try:
        return cls(**kw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid config section {path or 'root'}: {e}") from None


def config_from_dict(data: dict) -> TrainConfig:
    """Build a TrainConfig from JSON data; unknown keys raise ConfigError."""
    return _build(TrainConfig, data, "")


def config_to_dict(cfg: TrainConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["scene"]["objects"] = {k: list(v) for k, v in cfg.scene.objects.items()}
    return d


# -- shared training machinery ----------------------------------------------------


@dataclass
class Inputs:
    """Everything derived from one synthetic scene for a given config."""

    scene: Scene
    scribbles: LabelGrid
    G: np.ndarray
    G_noisy: np.ndarray
    feats_geometry: np.ndarray
    feats_clean: np.ndarray
    feats_noisy: np.ndarray
    shells: np.ndarray

    @property
    def spec(self) -> GridSpec:
        return self.scene.spec


def prepare(cfg: TrainConfig) -> Inputs:
    scene = gen_scene(cfg.scene)
    scribbles = scribblize(scene.truth, cfg.scribble_rate, cfg.seed)
    G = scene.truth.geometry
    G_noisy = corrupt_geometry(G, cfg.drop_rate, cfg.add_rate, cfg.seed)
    dt = np.float32 if cfg.float32 else np.float64

    def norm(f):
        return (standardize(f) if cfg.standardize else f).astype(dt)

    return Inputs(
        scene,
        scribbles,
        G,
        G_noisy,
        norm(voxel_features(G, scene.hints, use_hints=False)),
        norm(voxel_features(G, scene.hints)),
        norm(voxel_features(G_noisy, scene.hints)),
        shell_ids(cfg.partition, scene.spec).ravel(),
    )


def _new_model(cfg: TrainConfig, tag: int) -> ToyModel:
    K = cfg.scene.num_classes
    return ToyModel.init(n_features(K), K + 1, cfg.hidden, seed=cfg.seed * 16 + tag)


def _fit(model: ToyModel, feats: np.ndarray, objective, cfg: TrainConfig) -> List[float]:
    """Full-batch gradient descent; ``objective(logits, hidden)`` returns (value, dlogits, dhidden)."""
    history = []
    velocity: Dict[str, np.ndarray] = {}
    for _ in range(cfg.steps):
        logits, h, pre = forward(model, feats)
        value, d_logits, d_hidden = objective(logits, h)
        if not np.isfinite(value):
            raise FloatingPointError("training loss became non-finite")
        history.append(value)
        grads = backward(model, feats, h, pre, d_logits, d_hidden)
        sgd_step(model, grads, cfg.step_size, velocity, cfg.momentum)
    return history


def predict_codes(logits: np.ndarray, spec: GridSpec, num_classes: int) -> LabelGrid:
    return LabelGrid(spec, np.argmax(logits, axis=1).astype(np.uint16), num_classes)


# -- stage I ----------------------------------------------------------------------


@dataclass
class DeanResult:
    model: ToyModel
    pseudo: LabelGrid
    history: List[float]


def train_dean(inputs: Inputs, cfg: TrainConfig) -> DeanResult:
    """Semantic segmentation of the complete geometry from scribbles (partial CE only).

    The Dean sees geometry alone; the hint channel is zeroed.

    Pseudo labels copy occupancy from the complete geometry and take the
    argmax over semantic channels on occupied voxels.
    """
    S = inputs.scribbles.semantics.ravel()
    if not (S >= 1).any():
        raise ValueError("no labeled voxels to train on")
    model = _new_model(cfg, 1)

    def objective(logits, h):
        r = L.partial_cross_entropy(logits, S)
        return r.value, r.grad, None

    history = _fit(model, inputs.feats_geometry, objective, cfg)
    logits, _, _ = forward(model, inputs.feats_geometry)
    sem = np.argmax(logits[:, 1:], axis=1) + 1
    codes = np.where(inputs.G.ravel(), sem, EMPTY).astype(np.uint16)
    pseudo = LabelGrid(inputs.spec, codes, cfg.scene.num_classes)
    return DeanResult(model.freeze(), pseudo, history)


@dataclass
class Teacher:
    model: ToyModel
    logits: np.ndarray
    hidden: np.ndarray
    history: List[float]

    def recompute(self, feats: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        logits, h, _ = forward(self.model, feats)
        return logits, h


def train_teacher(inputs: Inputs, cfg: TrainConfig) -> Teacher:
    """Offline model on clean geometry: partial CE plus geometric affinity vs complete G."""
    S = inputs.scribbles.semantics.ravel()
    if not (S >= 1).any():
        raise ValueError("no labeled voxels to train on")
    G = inputs.G.ravel()
    model = _new_model(cfg, 2)

    def objective(logits, h):
        a = L.partial_cross_entropy(logits, S)
        b = L.scene_class_affinity_geo(logits, G)
        return a.value + b.value, a.grad + b.grad, None

    history = _fit(model, inputs.feats_clean, objective, cfg)
    model.freeze()
    logits, h, _ = forward(model, inputs.feats_clean)
    logits.flags.writeable = False
    h.flags.writeable = False
    return Teacher(model, logits, h, history)


def teacher_from_model(model: ToyModel, inputs: Inputs) -> Teacher:
    """Rebuild a frozen teacher (with caches) from saved parameters."""
    if model.W1.shape[0] != inputs.feats_clean.shape[1]:
        raise ValueError("teacher parameters do not match the scene's feature layout")
    model.freeze()
    logits, h, _ = forward(model, inputs.feats_clean)
    logits.flags.writeable = False
    h.flags.writeable = False
    return Teacher(model, logits, h, [])


# -- stage II ---------------------------------------------------------------------


def student_objective(inputs: Inputs, supervision: LabelGrid, teacher: Optional[Teacher], weights: D.DistillWeights, cfg: TrainConfig):
    """The full online objective ``sem + geo + total_weight * distill`` as a closure.

    Returns ``objective(logits, hidden) -> (value, dlogits, dhidden)``.
    """
    labels = supervision.codes.ravel()
    C = supervision.num_classes + 1
    cw = L.class_weights(labels, C)
    G = inputs.G.ravel()
    S = inputs.scribbles.semantics.ravel()
    use_distill = teacher is not None and weights.active
    if use_distill:
        distiller = D.RangeDistiller(teacher.logits, S, inputs.shells, len(weights.w))
        tw = weights.total_weight
        g_coef = [tw * wr * weights.global_weight for wr in weights.w]
        l_coef = [tw * wr * weights.local_weight for wr in weights.w]

    def objective(logits, h):
        sem = L.weighted_cross_entropy(logits, labels, cw)
        geo = L.scene_class_affinity_geo(logits, G)
        value = cfg.sem_weight * sem.value + cfg.geo_weight * geo.value
        d_logits = cfg.sem_weight * sem.grad + cfg.geo_weight * geo.grad
        d_hidden = None
        if use_distill:
            feat = D.feature_mse(h, teacher.hidden) if weights.feature_weight else None
            g_vals, l_vals, d_shell = distiller(logits, weights.alpha, weights.beta, g_coef, l_coef)
            d_logits = d_logits + d_shell
            value += tw * D.compose_distill(feat.value if feat else 0.0, g_vals, l_vals, weights)
            if feat is not None:
                d_hidden = tw * weights.feature_weight * feat.grad
        return value, d_logits, d_hidden

    return objective


@dataclass
class StudentResult:
    model: ToyModel
    report: RangeReport
    history: List[float]
    pred: LabelGrid


def train_student(
    inputs: Inputs,
    supervision: LabelGrid,
    teacher: Optional[Teacher],
    cfg: TrainConfig,
    weights: Optional[D.DistillWeights] = None,
) -> StudentResult:
    """Online model on corrupted geometry, evaluated against the scene truth.

    ``supervision`` is the Dean pseudo-label grid, or the raw scribbles for
    the baseline. ``weights`` defaults to ``cfg.distill``.
    """
    if supervision.spec != inputs.spec:
        raise ValueError("supervision grid does not match the scene")
    weights = cfg.distill if weights is None else weights
    if teacher is not None and not teacher.model.frozen:
        raise ValueError("teacher must be frozen before stage II")
    model = _new_model(cfg, 3)
    objective = student_objective(inputs, supervision, teacher, weights, cfg)
    history = _fit(model, inputs.feats_noisy, objective, cfg)
    logits, _, _ = forward(model, inputs.feats_noisy)
    pred = predict_codes(logits, inputs.spec, cfg.scene.num_classes)
    report = range_report(pred, inputs.scene.truth, cfg.partition)
    return StudentResult(model, report, history, pred)


def evaluate_model(model: ToyModel, feats: np.ndarray, inputs: Inputs, cfg: TrainConfig) -> RangeReport:
    logits, _, _ = forward(model, feats)
    return range_report(predict_codes(logits, inputs.spec, cfg.scene.num_classes), inputs.scene.truth, cfg.partition)


# -- ablations --------------------------------------------------------------------


def ablation_rows(w: D.DistillWeights) -> List[dict]:
    """Row definitions: six module-impact rows, then four distillation leave-one-out rows."""
    off = D.DistillWeights.zero()
    uni = w.uniform_range()
    rows = [
        ("baseline", "scribbles", off, "module"),
        ("TL", "scribbles", uni, "module"),
        ("TL+RGO2D", "scribbles", w, "module"),
        ("DL", "pseudo", off, "module"),
        ("DL+TL", "pseudo", uni, "module"),
        ("DL+TL+RGO2D", "pseudo", w, "module"),
        ("w/o global", "pseudo", dataclasses.replace(w, global_weight=0.0), "distill"),
        ("w/o local", "pseudo", dataclasses.replace(w, local_weight=0.0), "distill"),
        ("w/o range-info", "pseudo", uni, "distill"),
        ("w/o feature", "pseudo", dataclasses.replace(w, feature_weight=0.0), "distill"),
    ]
    return [
        {"name": n, "supervision": s, "weights": wt, "table": t, "w_r": list(wt.w)}
        for n, s, wt, t in rows
    ]


def run_seed(cfg: TrainConfig, rows: Sequence[dict]) -> Dict[str, RangeReport]:
    """All ablation cells for one seed; identical cells are trained once."""
    inputs = prepare(cfg)
    dean = train_dean(inputs, cfg)
    teacher = train_teacher(inputs, cfg)
    sup = {"scribbles": inputs.scribbles, "pseudo": dean.pseudo}
    cache: Dict[tuple, RangeReport] = {}
    out = {}
    for row in rows:
        key = (row["supervision"], row["weights"])
        if key not in cache:
            t = teacher if row["weights"].active else None
            cache[key] = train_student(inputs, sup[row["supervision"]], t, cfg, row["weights"]).report
        out[row["name"]] = cache[key]
    out["_dean"] = range_report(dean.pseudo, inputs.scene.truth, cfg.partition)
    out["_teacher"] = evaluate_model(teacher.model, inputs.feats_clean, inputs, cfg)
    return out


def ablation_suite(cfg: TrainConfig, seeds: Sequence[int] = (0, 1, 2, 3, 4)) -> dict:
    """Mean IoU / mIoU (full range) per ablation row over ``seeds``."""
    rows = ablation_rows(cfg.distill)
    per_seed = [run_seed(cfg.with_seed(s), rows) for s in seeds]
    table = []
    for row in rows + [{"name": "_dean", "table": "labeler"}, {"name": "_teacher", "table": "labeler"}]:
        reps = [ps[row["name"]] for ps in per_seed]
        entry = {
            "name": row["name"].lstrip("_"),
            "table": row["table"],
            "iou": float(np.mean([r.iou[-1] for r in reps])),
            "miou": float(np.mean([r.miou[-1] for r in reps])),
            "miou_per_seed": [r.miou[-1] for r in reps],
            "iou_per_seed": [r.iou[-1] for r in reps],
        }
        if "weights" in row:
            entry["supervision"] = row["supervision"]
            entry["w_r"] = row["w_r"]
            entry["distill"] = dataclasses.asdict(row["weights"])
        table.append(entry)
    return {"seeds": list(seeds), "rows": table, "config": config_to_dict(cfg)}
