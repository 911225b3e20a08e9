"""Config-driven training for the classifier and the segmenter.

Both loops share the same skeleton: seeded momentum-SGD over a cached,
pre-transformed dataset, a validation pass after every epoch, and
retention of the checkpoint with the best validation metric (earliest
epoch on ties). Per-sample augmentation and click-simulation seeds derive
from (run seed, case id, epoch), so results do not depend on worker
count or caching.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .classifier import ClassifierConfig, build_classifier
from .errors import CheckpointError, SplitError, TrainingDivergedError
from .labels import (
    CLASS_LABELS,
    LESION_ID,
    ROLE_TRAIN,
    ROLE_VALIDATION,
    SEG_SCHEME_LABELS,
    canonical_role,
)
from .manifest import DatasetManifest
from .metrics import MetricsReport, classification_accuracy, dice, mean_dice_std
from .segmenter import (
    GuidanceMaps,
    SegmenterConfig,
    build_segmenter,
    make_guidance_maps,
    segment,
    simulate_clicks,
)
from .transforms import (
    AugmentationPolicy,
    IntensityWindow,
    augment,
    extract_slices,
    normalize_intensity,
    prepare_classifier_input,
    sample_seed,
)
from .volume import load_mask, load_volume

TASK_CLASSIFY3 = "classify3"
TASK_SEG2 = "seg2"
TASK_SEG4 = "seg4"
TASKS = (TASK_CLASSIFY3, TASK_SEG2, TASK_SEG4)

_DEFAULT_LR = {TASK_CLASSIFY3: 1e-3, TASK_SEG2: 5e-4, TASK_SEG4: 1e-4}

CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class TrainConfig:
    task: str
    epochs: int = 50
    batch_size: int = 4
    learning_rate: float | None = None  # None -> per-task default
    momentum: float = 0.95
    seed: int = 0
    cache_enabled: bool = True
    validation_every: int = 1
    iterations_per_epoch: int | None = None  # None -> ceil(train size / batch)
    base_channels: int = 16   # segmenter width
    base_width: int = 64      # classifier width
    slices_per_case: int = 1  # classifier samples per volume
    guidance_sigma: float = 2.0
    max_clicks: int = 5
    hu_window: tuple | None = None  # (hu_min, hu_max) to normalize raw CT
    num_workers: int = 1

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.learning_rate is not None and self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.validation_every != 1:
            raise ValueError("validation runs after every epoch in this version")

    @property
    def effective_learning_rate(self) -> float:
        return self.learning_rate if self.learning_rate is not None else _DEFAULT_LR[self.task]

    @property
    def selection_metric(self) -> str:
        return "accuracy" if self.task == TASK_CLASSIFY3 else "mean_dice"

    @property
    def scheme(self) -> str:
        return "classification3" if self.task == TASK_CLASSIFY3 else self.task

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["hu_window"] = list(self.hu_window) if self.hu_window else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if d.get("hu_window"):
            d["hu_window"] = tuple(d["hu_window"])
        return cls(**d)


@dataclass
class Checkpoint:
    """Versioned container: weights + configs + the validation metric."""

    model_kind: str
    model_config: dict
    state_dict: dict
    train_config: dict
    epoch: int
    metric_name: str
    metric_value: float
    format_version: int = CHECKPOINT_FORMAT_VERSION

    def save(self, path) -> None:
        torch.save(
            {
                "format_version": self.format_version,
                "model_kind": self.model_kind,
                "model_config": self.model_config,
                "state_dict": self.state_dict,
                "train_config": self.train_config,
                "epoch": self.epoch,
                "metric_name": self.metric_name,
                "metric_value": self.metric_value,
            },
            path,
        )

    def build_model(self):
        if self.model_kind == "classifier3":
            model = build_classifier(ClassifierConfig.from_dict(self.model_config))
        elif self.model_kind in (TASK_SEG2, TASK_SEG4):
            model = build_segmenter(SegmenterConfig.from_dict(self.model_config))
        else:
            raise CheckpointError(f"unknown model kind {self.model_kind!r}")
        model.load_state_dict(self.state_dict)
        model.eval()
        return model


def load_checkpoint(path, expect_kind: str | None = None) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "model_kind" not in payload:
        raise CheckpointError(f"{path} is not a lungtriage checkpoint")
    if payload.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {payload.get('format_version')}"
        )
    ckpt = Checkpoint(
        model_kind=payload["model_kind"],
        model_config=payload["model_config"],
        state_dict=payload["state_dict"],
        train_config=payload["train_config"],
        epoch=payload["epoch"],
        metric_name=payload["metric_name"],
        metric_value=payload["metric_value"],
    )
    if expect_kind is not None and ckpt.model_kind != expect_kind:
        raise CheckpointError(
            f"{path}: checkpoint is {ckpt.model_kind!r}, expected {expect_kind!r}"
        )
    return ckpt


def load_model(path, expect_kind: str | None = None):
    ckpt = load_checkpoint(path, expect_kind)
    return ckpt.build_model(), ckpt


class CachedDataset:
    """Per-role samples with the deterministic transforms applied once.

    With caching enabled, every source file is read exactly once (in
    record order, optionally by a thread pool); later epochs are served
    from memory. Disabled, each access reloads from disk but yields
    byte-identical samples. `source_reads` counts file opens.
    """

    def __init__(self, manifest: DatasetManifest, root, task: str, role: str | None,
                 hu_window=None, slices_per_case: int = 1, workers: int = 1,
                 enabled: bool = True):
        self.task = task
        self.role = canonical_role(role) if role is not None else None
        self.root = Path(root)
        self.hu_window = hu_window
        self.slices_per_case = slices_per_case
        self.enabled = enabled
        self.source_reads = 0
        # role None means every record regardless of split
        self.records = manifest.records if role is None else manifest.records_for_role(role)
        self._cache = None
        if enabled and self.records:
            if workers > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    self._cache = list(pool.map(self._load_case, self.records))
            else:
                self._cache = [self._load_case(r) for r in self.records]

    def __len__(self) -> int:
        return len(self.records)

    def get(self, index: int) -> dict:
        if self._cache is not None:
            return self._cache[index]
        return self._load_case(self.records[index])

    def _resolve(self, record_path: str) -> Path:
        p = Path(record_path)
        return p if p.is_absolute() else self.root / p

    def _load_case(self, record) -> dict:
        image_path = self._resolve(record.image_path)
        try:
            volume = load_volume(image_path)
            self.source_reads += 1
            if self.hu_window is not None:
                volume = normalize_intensity(volume, IntensityWindow(*self.hu_window))
            entry = {"case_id": record.case_id, "class_label": record.class_label}
            if self.task == TASK_CLASSIFY3:
                nz = volume.shape[2]
                count = min(self.slices_per_case, nz)
                positions = np.linspace(0, nz - 1, count + 2)[1:-1] if count < nz else np.arange(nz)
                indices = sorted({int(round(p)) for p in positions})
                entry["slices"] = extract_slices(volume, "z", indices)
            else:
                entry["volume"] = volume
                if record.mask_path:
                    entry["mask"] = load_mask(self._resolve(record.mask_path), self.task,
                                              reference=volume)
                    self.source_reads += 1
                else:
                    entry["mask"] = None
            return entry
        except Exception as exc:
            raise type(exc)(f"case {record.case_id}: {exc}") from exc


def cache_transformed(manifest: DatasetManifest, root, task: str, role: str = ROLE_TRAIN,
                      **kwargs) -> CachedDataset:
    """Build the transformed-and-cached view of one split role."""
    return CachedDataset(manifest, root, task, role, **kwargs)


def select_best_checkpoint(history) -> int:
    """1-based epoch of the best metric; earliest epoch wins ties."""
    history = list(history)
    if not history:
        raise ValueError("empty metric history")
    best = max(history)
    return history.index(best) + 1


def convergence_epoch(history, rel_tol: float = 0.01) -> int:
    """First epoch whose metric is within rel_tol of the final plateau.

    The plateau is the mean of the last tenth of the history (at least
    one epoch). Reported for inspection only; training never stops early.
    """
    history = list(history)
    tail = history[-max(1, len(history) // 10):]
    plateau = float(np.mean(tail))
    threshold = rel_tol * max(abs(plateau), 1e-9)
    for epoch, value in enumerate(history, start=1):
        if abs(value - plateau) <= threshold:
            return epoch
    return len(history)


@dataclass
class TrainReport:
    """Everything a run produced besides the weights."""

    task: str
    metrics: MetricsReport
    wall_time_s: float
    selected_epoch: int
    selected_metric: float
    selected_checkpoint_id: str
    convergence_epoch: int

    @property
    def total_steps(self) -> int:
        return self.metrics.total_steps

    def to_json(self) -> str:
        return json.dumps(
            {
                "task": self.task,
                "wall_time_s": self.wall_time_s,
                "selected_epoch": self.selected_epoch,
                "selected_metric": self.selected_metric,
                "selected_checkpoint_id": self.selected_checkpoint_id,
                "convergence_epoch": self.convergence_epoch,
                "total_steps": self.total_steps,
                "metrics": json.loads(self.metrics.to_json()),
            },
            indent=2,
            sort_keys=True,
        )


def _segmentation_loss(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean of foreground soft-Dice loss and weighted voxel cross-entropy.

    The CE term uses inverse-sqrt-frequency class weights (normalized to
    mean 1) so the tiny lesion class is not drowned out by background;
    the Dice term averages foreground classes only.
    """
    num_classes = logits.shape[1]
    onehot = F.one_hot(target, num_classes).permute(0, 4, 1, 2, 3).to(logits.dtype)
    dims = (0, 2, 3, 4)
    freq = onehot.mean(dim=dims)
    weights = 1.0 / torch.sqrt(freq + 1e-4)
    weights = weights / weights.mean()

    probs = torch.softmax(logits, dim=1)
    intersect = (probs * onehot).sum(dim=dims)
    denom = probs.sum(dim=dims) + onehot.sum(dim=dims)
    per_class = (2 * intersect + 1e-5) / (denom + 1e-5)
    soft_dice = 1.0 - per_class[1:].mean()
    return 0.5 * (soft_dice + F.cross_entropy(logits, target, weight=weights))


def _epoch_batches(samples, iterations: int, batch_size: int, seed: int, epoch: int):
    """Deterministic batches for one epoch.

    A seeded permutation is sliced into batches (the final one may be
    short); when iterations exceed one pass, further permutations are
    drawn from the same stream.
    """
    rng = np.random.default_rng(sample_seed(seed, "epoch-order", epoch))
    batches = []
    while len(batches) < iterations:
        order = rng.permutation(len(samples)).tolist()
        for start in range(0, len(order), batch_size):
            batches.append([samples[i] for i in order[start : start + batch_size]])
            if len(batches) == iterations:
                break
    return batches


def _foreground_case_dice(pred_mask, truth_mask, scheme: str) -> dict:
    return {
        label_id: dice(pred_mask, truth_mask, label_id)
        for label_id in SEG_SCHEME_LABELS[scheme]
    }


def _mean_foreground(per_label: dict) -> float:
    fg = [v for k, v in per_label.items() if k != 0]
    return float(np.mean(fg))


class _Trainer:
    def __init__(self, config: TrainConfig, manifest: DatasetManifest, root,
                 policy: AugmentationPolicy | None):
        self.config = config
        self.policy = policy
        self.train_ds = CachedDataset(
            manifest, root, config.task, ROLE_TRAIN, hu_window=config.hu_window,
            slices_per_case=config.slices_per_case, workers=config.num_workers,
            enabled=config.cache_enabled,
        )
        self.val_ds = CachedDataset(
            manifest, root, config.task, ROLE_VALIDATION, hu_window=config.hu_window,
            slices_per_case=config.slices_per_case, workers=config.num_workers,
            enabled=config.cache_enabled,
        )
        if len(self.train_ds) == 0 or len(self.val_ds) == 0:
            raise SplitError(
                f"task {config.task} needs nonempty train and validation splits "
                f"(got {len(self.train_ds)}/{len(self.val_ds)})"
            )

    def _augment(self, image, mask, case_id: str, epoch: int, role: str):
        if self.policy is None:
            return image, mask
        seed = sample_seed(self.config.seed, case_id, epoch)
        return augment((image, mask), self.policy, role, seed)

    # -- classifier task -----------------------------------------------------

    def _classifier_samples(self, ds: CachedDataset):
        return [(i, s) for i in range(len(ds)) for s in range(len(ds.get(i)["slices"]))]

    def _classifier_batch(self, ds, samples, epoch: int, role: str):
        images, labels = [], []
        for case_idx, slice_idx in samples:
            entry = ds.get(case_idx)
            sl = entry["slices"][slice_idx]
            sl, _ = self._augment(sl, None, f"{entry['case_id']}#{slice_idx}", epoch, role)
            prepared = prepare_classifier_input(sl)
            images.append(torch.from_numpy(prepared.pixels.transpose(2, 0, 1).copy()))
            labels.append(CLASS_LABELS.index(entry["class_label"]))
        return torch.stack(images).float(), torch.tensor(labels, dtype=torch.long)

    def _classifier_validation(self, model, epoch: int) -> float:
        samples = self._classifier_samples(self.val_ds)
        preds, truths = [], []
        model.eval()
        with torch.no_grad():
            for case_idx, slice_idx in samples:
                entry = self.val_ds.get(case_idx)
                sl, _ = self._augment(entry["slices"][slice_idx], None,
                                      f"{entry['case_id']}#{slice_idx}", epoch, ROLE_VALIDATION)
                x, _ = self._classifier_batch_single(sl)
                probs = model.predict_proba(x)[0].numpy()
                preds.append(CLASS_LABELS[int(np.argmax(probs))])
                truths.append(entry["class_label"])
        return classification_accuracy(preds, truths)

    @staticmethod
    def _classifier_batch_single(sl):
        prepared = prepare_classifier_input(sl)
        x = torch.from_numpy(prepared.pixels.transpose(2, 0, 1).copy()).float().unsqueeze(0)
        return x, prepared

    # -- segmentation task ---------------------------------------------------

    def _segmentation_batch(self, samples, epoch: int, role: str):
        channels, targets = [], []
        for case_idx in samples:
            entry = self.train_ds.get(case_idx) if role == ROLE_TRAIN else self.val_ds.get(case_idx)
            if entry["mask"] is None:
                raise ValueError(f"case {entry['case_id']}: segmentation training needs a mask")
            volume, mask = self._augment(entry["volume"], entry["mask"],
                                         entry["case_id"], epoch, role)
            rng = np.random.default_rng(sample_seed(self.config.seed,
                                                    f"{entry['case_id']}:clicks", epoch))
            clicks = simulate_clicks(mask, rng, LESION_ID[self.config.task],
                                     self.config.max_clicks, self.config.max_clicks)
            maps = make_guidance_maps(clicks, volume.shape, self.config.guidance_sigma)
            stacked = np.stack([volume.voxels, maps.positive, maps.negative])
            channels.append(torch.from_numpy(stacked))
            targets.append(torch.from_numpy(mask.labels.astype(np.int64)))
        return torch.stack(channels).float(), torch.stack(targets)

    def _segmentation_validation(self, model, epoch: int) -> float:
        scores = []
        for i in range(len(self.val_ds)):
            entry = self.val_ds.get(i)
            volume, mask = self._augment(entry["volume"], entry["mask"],
                                         entry["case_id"], epoch, ROLE_VALIDATION)
            _, pred = segment(model, volume, GuidanceMaps.zeros(volume.shape))
            per_label = _foreground_case_dice(pred, mask, self.config.task)
            scores.append(_mean_foreground(per_label))
        return float(np.mean(scores))

    # -- shared loop ---------------------------------------------------------

    def run(self):
        config = self.config
        torch.manual_seed(config.seed)
        if config.task == TASK_CLASSIFY3:
            model = build_classifier(ClassifierConfig(base_width=config.base_width,
                                                      weight_seed=config.seed))
            train_samples = self._classifier_samples(self.train_ds)
        else:
            model = build_segmenter(SegmenterConfig.for_scheme(
                config.task, base_channels=config.base_channels, weight_seed=config.seed))
            train_samples = list(range(len(self.train_ds)))

        optimizer = torch.optim.SGD(model.parameters(), lr=config.effective_learning_rate,
                                    momentum=config.momentum)
        iterations = config.iterations_per_epoch or math.ceil(len(train_samples) / config.batch_size)

        t0 = time.perf_counter()
        train_losses, val_metrics = [], []
        best = None  # (metric, epoch, state_dict copy)
        step = 0
        for epoch in range(1, config.epochs + 1):
            batches = _epoch_batches(train_samples, iterations, config.batch_size,
                                     config.seed, epoch)
            model.train()
            epoch_losses = []
            for batch in batches:
                if config.task == TASK_CLASSIFY3:
                    x, y = self._classifier_batch(self.train_ds, batch, epoch, ROLE_TRAIN)
                    loss = F.cross_entropy(model(x), y)
                else:
                    x, y = self._segmentation_batch(batch, epoch, ROLE_TRAIN)
                    loss = _segmentation_loss(model(x), y)
                step += 1
                loss_value = float(loss.detach())
                if not math.isfinite(loss_value):
                    raise TrainingDivergedError(step, loss_value)
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                epoch_losses.append(loss_value)
            train_losses.append(float(np.mean(epoch_losses)))

            if config.task == TASK_CLASSIFY3:
                metric = self._classifier_validation(model, epoch)
            else:
                metric = self._segmentation_validation(model, epoch)
            val_metrics.append(metric)
            if best is None or metric > best[0]:
                state = {k: v.detach().clone() for k, v in model.state_dict().items()}
                best = (metric, epoch, state)

        wall = time.perf_counter() - t0
        best_metric, best_epoch, best_state = best
        model.load_state_dict(best_state)
        model.eval()

        report_metrics = MetricsReport(
            train_loss=train_losses,
            validation_metric=val_metrics,
            metric_name=config.selection_metric,
            epochs=config.epochs,
            iterations_per_epoch=iterations,
        )
        if config.task != TASK_CLASSIFY3:
            per_case = {}
            for i in range(len(self.val_ds)):
                entry = self.val_ds.get(i)
                _, pred = segment(model, entry["volume"], GuidanceMaps.zeros(entry["volume"].shape))
                per_case[entry["case_id"]] = _foreground_case_dice(pred, entry["mask"], config.task)
            report_metrics.per_case_dice = per_case
            if per_case:
                fg_means = [_mean_foreground(d) for d in per_case.values()]
                report_metrics.mean_dice, report_metrics.std_dice = mean_dice_std(fg_means)

        if config.task == TASK_CLASSIFY3:
            model_config = ClassifierConfig(base_width=config.base_width,
                                            weight_seed=config.seed).to_dict()
            model_kind = "classifier3"
        else:
            model_config = SegmenterConfig.for_scheme(
                config.task, base_channels=config.base_channels,
                weight_seed=config.seed).to_dict()
            model_kind = config.task

        checkpoint = Checkpoint(
            model_kind=model_kind,
            model_config=model_config,
            state_dict=best_state,
            train_config=config.to_dict(),
            epoch=best_epoch,
            metric_name=config.selection_metric,
            metric_value=best_metric,
        )
        report = TrainReport(
            task=config.task,
            metrics=report_metrics,
            wall_time_s=wall,
            selected_epoch=best_epoch,
            selected_metric=best_metric,
            selected_checkpoint_id=f"epoch-{best_epoch:04d}",
            convergence_epoch=convergence_epoch(val_metrics),
        )
        return report, checkpoint


def train(config: TrainConfig, manifest: DatasetManifest, root=".",
          policy: AugmentationPolicy | None = None, out_dir=None):
    """Run a full training job.

    Returns (TrainReport, Checkpoint). When out_dir is given, writes
    checkpoint.pt and report.json there.
    """
    report, checkpoint = _Trainer(config, manifest, root, policy).run()
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        checkpoint.save(out_dir / "checkpoint.pt")
        (out_dir / "report.json").write_text(report.to_json(), encoding="utf-8")
    return report, checkpoint
