"""Experiment orchestration: manifests, splits, the render cache, training,
prediction, and report assembly.

A manifest row ties a cloud file to its quality label and content group.
Splits are always drawn at content-group level so distorted versions of one
source never appear on both sides of a fold. Rendered sequences are cached
as PCV files keyed by a hash of the capture configuration; a stale cache
can therefore never leak into an experiment.

Every stage is a deterministic function of (manifest, config, seed): RNG
streams derive from the experiment seed and fold index, and execution is
sequential, so reruns reproduce reports bit for bit.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import re
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .cloud_io import parse_ply
from .config import RunConfig
from .metrics import AllTied, ConstantInput, krcc, plcc, rmse, srcc, significance_matrix
from .nn.network import init_params, network_backward, network_forward
from .nn.ops import mse_loss
from .nn.optim import AdamState, adam_step
from .orbit_camera import CaptureConfig, OrbitId
from .renderer import (
    VideoSequence,
    capture_sequences,
    center_crop,
    load_sequence,
    resize_bilinear,
    save_sequence,
)
from .sampling import gather_clip, sample_eval_clip, sample_training_clip

_ID_PATTERN = re.compile(r"^[A-Za-z0-9._-]+$")
_MANIFEST_COLUMNS = ("id", "cloud_path", "mos", "content_group", "distortion")


class MissingColumn(ValueError):
    pass


class DuplicateId(ValueError):
    pass


class BadNumber(ValueError):
    pass


class TooFewGroups(ValueError):
    pass


class CacheMiss(LookupError):
    pass


class SplitMismatch(ValueError):
    pass


class RenderFailure(RuntimeError):
    pass


# --------------------------------------------------------------------------
# Manifest
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    id: str
    cloud_path: str
    mos: float
    content_group: str
    distortion: str


def load_manifest(path) -> list[ManifestEntry]:
    """Parse a manifest CSV with columns id,cloud_path,mos,content_group,distortion.

    Relative cloud paths are resolved against the manifest's directory.
    """
    path = Path(path)
    base = path.parent
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for column in _MANIFEST_COLUMNS:
            if column not in header:
                raise MissingColumn(f"{path}: manifest is missing column {column!r}")
        entries: list[ManifestEntry] = []
        seen: set[str] = set()
        for row_no, row in enumerate(reader, start=2):
            entry_id = (row["id"] or "").strip()
            if not entry_id or not _ID_PATTERN.match(entry_id):
                raise BadNumber(
                    f"{path}:{row_no}: id must match [A-Za-z0-9._-]+, got {row['id']!r}"
                )
            if entry_id in seen:
                raise DuplicateId(f"{path}:{row_no}: duplicate id {entry_id!r}")
            seen.add(entry_id)
            try:
                mos = float(row["mos"])
            except (TypeError, ValueError):
                raise BadNumber(
                    f"{path}:{row_no}: mos must be a number, got {row['mos']!r}"
                ) from None
            if not np.isfinite(mos):
                raise BadNumber(f"{path}:{row_no}: mos must be finite, got {mos}")
            cloud_path = Path(row["cloud_path"])
            if not cloud_path.is_absolute():
                cloud_path = base / cloud_path
            entries.append(ManifestEntry(
                id=entry_id,
                cloud_path=str(cloud_path),
                mos=mos,
                content_group=(row["content_group"] or "").strip(),
                distortion=(row["distortion"] or "").strip(),
            ))
    return entries


# --------------------------------------------------------------------------
# Split plans
# --------------------------------------------------------------------------

class SplitKind(Enum):
    RANDOM_BY_CONTENT = "random82"
    LEAVE_ONE_CONTENT_OUT = "loco"


@dataclass(frozen=True)
class SplitPlan:
    kind: SplitKind
    seed: int
    folds: tuple  # of (train_ids tuple, test_ids tuple)


def make_splits(entries: list[ManifestEntry], kind: SplitKind, seed: int = 0) -> SplitPlan:
    """Content-level split plan: either ten random 80/20 draws or one fold
    per content group (leave-one-content-out)."""
    groups = sorted({e.content_group for e in entries})
    if len(groups) < 2:
        raise TooFewGroups(f"need at least 2 content groups, got {len(groups)}")
    by_group: dict[str, list[str]] = {g: [] for g in groups}
    for e in entries:
        by_group[e.content_group].append(e.id)

    def ids_of(selected: list[str]) -> tuple[str, ...]:
        chosen = set(selected)
        return tuple(e.id for e in entries if e.content_group in chosen)

    folds = []
    if kind is SplitKind.LEAVE_ONE_CONTENT_OUT:
        for g in groups:
            rest = [x for x in groups if x != g]
            folds.append((ids_of(rest), ids_of([g])))
    else:
        rng = np.random.default_rng(seed)
        n_test = int(round(0.2 * len(groups)))
        n_test = max(1, min(len(groups) - 1, n_test))
        for _ in range(10):
            perm = [groups[i] for i in rng.permutation(len(groups))]
            test_groups = perm[:n_test]
            train_groups = perm[n_test:]
            folds.append((ids_of(train_groups), ids_of(test_groups)))
    return SplitPlan(kind=kind, seed=seed, folds=tuple(folds))


# --------------------------------------------------------------------------
# Render cache
# --------------------------------------------------------------------------

def capture_config_hash(capture: CaptureConfig) -> str:
    blob = json.dumps({
        "radius_scale": capture.radius_scale,
        "frames_per_orbit": capture.frames_per_orbit,
        "image_width": capture.image_width,
        "image_height": capture.image_height,
        "vertical_fov_degrees": capture.vertical_fov_degrees,
        "splat_size": capture.splat_size,
        "background": list(capture.background),
    }, sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _pcv_is_valid(path: Path, capture: CaptureConfig) -> bool:
    try:
        size = os.stat(path).st_size
    except OSError:
        return False
    expected = 21 + capture.frames_per_orbit * capture.image_width * capture.image_height * 3
    return size == expected


def build_cache(entries: list[ManifestEntry], capture: CaptureConfig, cache_dir):
    """Render any missing A/B/C sequences; returns (index, rendered_count).

    index maps entry id -> {"A": path, "B": path, "C": path}. Existing valid
    files are skipped, so rebuilding an up-to-date cache renders nothing.
    """
    root = Path(cache_dir) / capture_config_hash(capture)
    root.mkdir(parents=True, exist_ok=True)
    index: dict[str, dict[str, str]] = {}
    rendered = 0
    for entry in entries:
        paths = {o.name: root / f"{entry.id}_{o.name}.pcv" for o in OrbitId}
        if not all(_pcv_is_valid(p, capture) for p in paths.values()):
            try:
                cloud = parse_ply(Path(entry.cloud_path).read_bytes())
                seqs = capture_sequences(cloud, capture)
            except Exception as exc:
                raise RenderFailure(f"entry {entry.id!r}: {exc}") from exc
            for seq in seqs:
                save_sequence(seq, paths[seq.orbit.name])
            rendered += 1
        index[entry.id] = {name: str(p) for name, p in paths.items()}
    return index, rendered


def _preprocess(seq: VideoSequence, capture: CaptureConfig) -> VideoSequence:
    """Resize (usually the identity) and center-crop every frame."""
    if seq.width != capture.image_width or seq.height != capture.image_height:
        frames = np.stack([
            resize_bilinear(seq.frame(i), capture.image_width, capture.image_height).pixels
            for i in range(seq.frame_count)
        ])
        seq = VideoSequence(orbit=seq.orbit, frames=frames)
    y0 = (capture.image_height - capture.crop_height) // 2
    x0 = (capture.image_width - capture.crop_width) // 2
    cropped = seq.frames[:, y0:y0 + capture.crop_height, x0:x0 + capture.crop_width]
    return VideoSequence(orbit=seq.orbit, frames=cropped)


def _load_clip_source(index, entry_id: str, orbit_name: str,
                      capture: CaptureConfig) -> VideoSequence:
    try:
        path = index[entry_id][orbit_name]
    except KeyError:
        raise CacheMiss(f"no cached sequence for entry {entry_id!r}") from None
    if not Path(path).exists():
        raise CacheMiss(f"cache file vanished: {path}")
    return _preprocess(load_sequence(path), capture)


# --------------------------------------------------------------------------
# Training and prediction
# --------------------------------------------------------------------------

def train_fold(train_entries: list[ManifestEntry], index, cfg: RunConfig, seed):
    """Train on all sequences of the given entries; returns (params, loss_curve).

    Every orbit sequence is an independent sample carrying its entry's
    score. Each epoch draws one fresh random clip per sequence, shuffles
    the sample order, and applies Adam per mini-batch.
    """
    rng = np.random.default_rng(seed)
    tr = cfg.training
    sources = []
    labels = []
    for entry in train_entries:
        for orbit in OrbitId:
            sources.append(_load_clip_source(index, entry.id, orbit.name, cfg.capture))
            labels.append(entry.mos)
    labels = np.asarray(labels, dtype=np.float32)

    params = init_params(cfg.network, seed=int(rng.integers(2 ** 63)))
    state = AdamState(lr=tr.learning_rate)
    n = len(sources)
    loss_curve = []
    for _ in range(tr.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, tr.batch_size):
            chunk = order[start:start + tr.batch_size]
            clips = []
            for si in chunk:
                seq = sources[si]
                idx = sample_training_clip(
                    seq.frame_count, tr.clip_stride, tr.clip_length, rng
                )
                clips.append(gather_clip(seq, idx, dtype=np.float32))
            x = np.stack(clips)
            _, preds, cache = network_forward(
                cfg.network, params, x, mode="train", return_cache=True
            )
            loss, grad_preds = mse_loss(preds, labels[chunk])
            grads = network_backward(cfg.network, cache, grad_preds)
            adam_step(params, grads, state)
            epoch_loss += loss * len(chunk)
        loss_curve.append(epoch_loss / n)
    return params, loss_curve


def predict_entry(params, entry: ManifestEntry, index, cfg: RunConfig) -> float:
    """Mean of the three per-orbit predictions from the deterministic eval clip."""
    tr = cfg.training
    clips = []
    for orbit in OrbitId:
        seq = _load_clip_source(index, entry.id, orbit.name, cfg.capture)
        idx = sample_eval_clip(seq.frame_count, tr.clip_stride, tr.clip_length)
        clips.append(gather_clip(seq, idx, dtype=np.float32))
    _, preds = network_forward(cfg.network, params, np.stack(clips), mode="eval")
    return float(preds.mean())


# --------------------------------------------------------------------------
# Experiments and reports
# --------------------------------------------------------------------------

PREDICTORS = ("network", "oracle", "constant")


def _fold_metrics(predictions, labels) -> dict[str, float]:
    # Correlations are undefined for constant inputs (e.g. a constant
    # predictor); the report records 0.0 - no correlation - in that case so
    # degenerate models remain comparable.
    out = {}
    for name, fn in (("srcc", srcc), ("plcc", plcc), ("krcc", krcc)):
        try:
            out[name] = fn(predictions, labels)
        except (ConstantInput, AllTied):
            out[name] = 0.0
    out["rmse"] = rmse(predictions, labels)
    return out


@dataclass(frozen=True)
class FoldResult:
    fold: int
    test_ids: tuple
    srcc: float
    plcc: float
    krcc: float
    rmse: float


@dataclass(frozen=True)
class SamplePrediction:
    fold: int
    id: str
    mos: float
    prediction: float


@dataclass
class EvalReport:
    label: str
    predictor: str
    split_kind: str
    seed: int
    config: dict
    folds: list[FoldResult] = field(default_factory=list)
    samples: list[SamplePrediction] = field(default_factory=list)
    wall_clock_seconds: float = 0.0

    @property
    def averages(self) -> dict[str, float]:
        metrics = {}
        for name in ("srcc", "plcc", "krcc", "rmse"):
            values = [getattr(f, name) for f in self.folds]
            metrics[name] = float(np.mean(values)) if values else float("nan")
        return metrics

    def fold_srcc(self) -> list[float]:
        return [f.srcc for f in self.folds]

    def to_dict(self, include_timing: bool = True) -> dict:
        data = {
            "label": self.label,
            "predictor": self.predictor,
            "split_kind": self.split_kind,
            "seed": self.seed,
            "config": self.config,
            "folds": [
                {"fold": f.fold, "test_ids": list(f.test_ids), "srcc": f.srcc,
                 "plcc": f.plcc, "krcc": f.krcc, "rmse": f.rmse}
                for f in self.folds
            ],
            "samples": [
                {"fold": s.fold, "id": s.id, "mos": s.mos, "prediction": s.prediction}
                for s in self.samples
            ],
            "averages": self.averages,
        }
        if include_timing:
            data["wall_clock_seconds"] = self.wall_clock_seconds
        return data

    def canonical_json(self) -> str:
        """Deterministic serialization; timing is excluded because wall-clock
        time is the one field that legitimately varies between identical runs."""
        return json.dumps(self.to_dict(include_timing=False), sort_keys=True)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @staticmethod
    def load(path) -> "EvalReport":
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        report = EvalReport(
            label=data["label"],
            predictor=data["predictor"],
            split_kind=data["split_kind"],
            seed=data["seed"],
            config=data["config"],
            folds=[FoldResult(fold=f["fold"], test_ids=tuple(f["test_ids"]),
                              srcc=f["srcc"], plcc=f["plcc"], krcc=f["krcc"],
                              rmse=f["rmse"])
                   for f in data["folds"]],
            samples=[SamplePrediction(fold=s["fold"], id=s["id"], mos=s["mos"],
                                      prediction=s["prediction"])
                     for s in data["samples"]],
            wall_clock_seconds=data.get("wall_clock_seconds", 0.0),
        )
        return report


def run_experiment(entries: list[ManifestEntry], kind: SplitKind, cfg: RunConfig,
                   seed: int, cache_dir, predictor: str = "network",
                   label: str | None = None, deterministic: bool = True) -> EvalReport:
    """Train and evaluate across every fold of the split plan.

    `predictor` selects the real network, a label-echoing oracle, or a
    train-mean constant baseline (the latter two exist for calibration and
    significance testing). `deterministic` pins fully sequential execution;
    it is accepted for interface stability although execution is currently
    always sequential.
    """
    if predictor not in PREDICTORS:
        raise ValueError(f"predictor must be one of {PREDICTORS}, got {predictor!r}")
    t0 = time.perf_counter()
    plan = make_splits(entries, kind, seed)
    index, _ = build_cache(entries, cfg.capture, cache_dir)
    by_id = {e.id: e for e in entries}

    report = EvalReport(
        label=label or predictor,
        predictor=predictor,
        split_kind=kind.value,
        seed=seed,
        config=cfg.to_dict(),
    )
    for fold_i, (train_ids, test_ids) in enumerate(plan.folds):
        train_entries = [by_id[i] for i in train_ids]
        test_entries = [by_id[i] for i in test_ids]
        if predictor == "network":
            params, _ = train_fold(train_entries, index, cfg, seed=[seed, fold_i])
            predictions = [predict_entry(params, e, index, cfg) for e in test_entries]
        elif predictor == "oracle":
            predictions = [e.mos for e in test_entries]
        else:
            mean_mos = float(np.mean([e.mos for e in train_entries]))
            predictions = [mean_mos for _ in test_entries]
        labels = [e.mos for e in test_entries]
        metrics = _fold_metrics(predictions, labels)
        report.folds.append(FoldResult(
            fold=fold_i, test_ids=tuple(test_ids), **metrics
        ))
        for e, p in zip(test_entries, predictions):
            report.samples.append(SamplePrediction(
                fold=fold_i, id=e.id, mos=e.mos, prediction=float(p)
            ))
    report.wall_clock_seconds = time.perf_counter() - t0
    return report


def compare_models(reports: list[EvalReport], alpha: float = 0.05):
    """Pairwise significance matrix over reports sharing one split plan.

    Returns (labels, matrix) where matrix[i][j] states whether row model i
    is statistically better/worse than column model j on per-fold SRCC.
    """
    if len(reports) < 1:
        raise ValueError("need at least one report")
    reference = reports[0]
    ref_folds = [tuple(f.test_ids) for f in reference.folds]
    for r in reports[1:]:
        folds = [tuple(f.test_ids) for f in r.folds]
        if (r.split_kind, r.seed, folds) != (reference.split_kind, reference.seed, ref_folds):
            raise SplitMismatch(
                f"report {r.label!r} was produced under a different split plan "
                f"than {reference.label!r}"
            )
    labels = []
    per_model = {}
    for r in reports:
        label = r.label
        suffix = 2
        while label in per_model:
            label = f"{r.label}#{suffix}"
            suffix += 1
        labels.append(label)
        per_model[label] = r.fold_srcc()
    return significance_matrix(per_model, alpha=alpha)


def render_significance_text(names, matrix) -> str:
    """Fixed-width grid: '+' row better, '-' row worse, '.' indistinguishable."""
    symbol = {"better": "+", "worse": "-", "indistinguishable": "."}
    width = max(len(n) for n in names)
    lines = [" " * (width + 2) + "  ".join(f"{n:>{width}}" for n in names)]
    for name, row in zip(names, matrix):
        cells = "  ".join(f"{symbol[v.verdict.value]:>{width}}" for v in row)
        lines.append(f"{name:>{width}}  {cells}")
    return "\n".join(lines)
