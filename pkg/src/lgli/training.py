"""Batch-softmax training of the full model.

Each batch classifies every composed query against the batch's target
features at every enabled level plus the final feature; plain SGD with a
fixed learning rate; masks are produced once by the frozen localizer
before the epoch loop, mirroring the mask-then-train procedure.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import LGLIModel, ModelConfig, build_mask_batch
from .scenes import Dataset
from .tensor import Tensor, apply_primitive, backward

try:  # BLAS pinning for the bitwise-determinism contract
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover
    threadpool_limits = None


class TrainingError(Exception):
    pass


class NonFiniteGradientError(TrainingError):
    pass


@dataclass
class TrainConfig:
    lr: float = 0.01
    epochs: int = 50                   # epoch cap
    batch_size: int = 32
    seed: int = 0
    val_every: int = 1
    # convergence: stop once the mean epoch loss of the last `loss_window`
    # epochs improves on the window before it by less than `loss_tol`
    # (relative); None disables early convergence
    loss_tol: Optional[float] = 0.01
    loss_window: int = 5
    min_epochs: int = 15
    single_thread: bool = False
    log_path: Optional[str] = None

    def validate(self) -> None:
        if self.lr <= 0 or self.epochs < 1 or self.batch_size < 2:
            raise TrainingError(f"invalid train config: {self}")
        if self.loss_tol is not None and (self.loss_tol < 0 or self.loss_window < 1):
            raise TrainingError(f"invalid convergence rule: {self}")


def multi_layer_loss(model: LGLIModel, composed: dict, targets: dict) -> Tensor:
    """Mean in-batch softmax cross-entropy over the enabled levels plus final."""
    cfg = model.config
    if composed["final"].shape[0] < 2:
        raise TrainingError("batch softmax needs at least 2 pairs")

    def processed(rows: Tensor, level: Optional[str]) -> Tensor:
        if level is not None:
            rows = apply_primitive(
                "linear",
                [rows, model.params[f"sup.{level}.w"], model.params[f"sup.{level}.b"]],
            )
        if cfg.normalize:
            rows = apply_primitive("l2_normalize", [rows])
        return rows

    terms = []
    level_keys = [lv for lv in cfg.levels if lv in composed["levels"]]
    for lv in level_keys + [None]:
        if lv is None:
            p = processed(composed["final"], None)
            q = processed(targets["final"], None)
        else:
            p = processed(composed["levels"][lv], lv)
            q = processed(targets["levels"][lv], lv)
        sim = apply_primitive(
            "scalar_scale",
            [apply_primitive("linear", [p, q])],
            {"scale": cfg.similarity_scale},
        )
        terms.append(apply_primitive("softmax_cross_entropy_rows", [sim]))
    total = terms[0]
    for t in terms[1:]:
        total = apply_primitive("add", [total, t])
    return apply_primitive("scalar_scale", [total], {"scale": 1.0 / len(terms)})


def sgd_step(params: dict, lr: float) -> None:
    """theta <- theta - lr * grad for every parameter holding a gradient."""
    for name, p in params.items():
        if p.grad is None or not p.requires_grad:
            continue
        if not np.isfinite(p.grad).all():
            raise NonFiniteGradientError(f"non-finite gradient in {name}")
        p.data -= lr * p.grad
        p.grad.fill(0.0)


@dataclass
class TrainResult:
    model: LGLIModel
    history: list = field(default_factory=list)
    best_val_r1: float = 0.0
    best_epoch: int = -1
    best_params: Optional[dict] = None
    stopped_early: bool = False

    def best_model(self) -> LGLIModel:
        if self.best_params is None:
            return self.model
        return LGLIModel(self.model.config, {
            k: Tensor(v, requires_grad=not k.startswith("loc."))
            for k, v in self.best_params.items()
        })


def _precompute_boxes(model: LGLIModel, dataset: Dataset, triplets: list) -> list:
    boxes = []
    for tp in triplets:
        boxes.append(model.localize_box(
            dataset, tp.reference, tp.modification.localization_text_tokens,
            image=dataset.render(tp.reference.scene_id),
        ))
    return boxes


def _val_r1(model: LGLIModel, dataset: Dataset, val_triplets: list, val_boxes) -> float:
    from .evaluation import build_index, recall_at, retrieve_topk_batch

    index = build_index(model, dataset, "test")
    results = retrieve_topk_batch(model, dataset, val_triplets, index, boxes=val_boxes)
    return recall_at(results, 1)


def train(dataset: Dataset, model_config: ModelConfig, train_config: TrainConfig,
          localizer_params: Optional[dict] = None) -> TrainResult:
    """Run the epoch loop until loss convergence or the epoch cap."""
    train_config.validate()
    if not model_config.vocabulary:
        model_config.vocabulary = list(dataset.vocabulary)

    if train_config.single_thread and threadpool_limits is not None:
        with threadpool_limits(limits=1):
            return _train_inner(dataset, model_config, train_config, localizer_params)
    return _train_inner(dataset, model_config, train_config, localizer_params)


def _train_inner(dataset, model_config, train_config, localizer_params) -> TrainResult:
    model = LGLIModel.initialize(model_config, localizer_params)
    triplets = dataset.split_triplets("train")
    if not triplets:
        raise TrainingError("dataset has no training triplets")
    val_triplets = dataset.split_triplets("test")

    need_masks = not model_config.concat_fallback and not model_config.disable_mask
    boxes = _precompute_boxes(model, dataset, triplets) if need_masks else None
    val_boxes = _precompute_boxes(model, dataset, val_triplets) if need_masks else None

    rng = np.random.default_rng(train_config.seed)
    result = TrainResult(model=model)
    log_fh = open(train_config.log_path, "a") if train_config.log_path else None
    b = train_config.batch_size
    try:
        for epoch in range(train_config.epochs):
            t0 = time.perf_counter()
            order = rng.permutation(len(triplets))
            losses = []
            for start in range(0, len(order), b):
                batch = order[start : start + b]
                if batch.size < 2:
                    continue
                loss = train_step(model, dataset, [triplets[i] for i in batch],
                                  None if boxes is None else [boxes[i] for i in batch],
                                  lr=train_config.lr)
                losses.append(loss)
            epoch_loss = float(np.mean(losses))
            entry = {"epoch": epoch, "loss": epoch_loss}
            if val_triplets and (epoch % train_config.val_every == 0
                                 or epoch == train_config.epochs - 1):
                r1 = _val_r1(model, dataset, val_triplets, val_boxes)
                entry["val_r1"] = r1
                if r1 > result.best_val_r1 or result.best_epoch < 0:
                    result.best_val_r1 = r1
                    result.best_epoch = epoch
                    result.best_params = {k: v.data.copy() for k, v in model.params.items()}
            entry["wall_ms"] = int((time.perf_counter() - t0) * 1000)
            result.history.append(entry)
            if log_fh:
                log_fh.write(json.dumps(entry) + "\n")
                log_fh.flush()
            if _loss_converged(result.history, train_config):
                result.stopped_early = True
                break
    finally:
        if log_fh:
            log_fh.close()
    return result


def _loss_converged(history: list, cfg: TrainConfig) -> bool:
    if cfg.loss_tol is None:
        return False
    w = cfg.loss_window
    if len(history) < max(cfg.min_epochs, 2 * w):
        return False
    recent = np.mean([h["loss"] for h in history[-w:]])
    previous = np.mean([h["loss"] for h in history[-2 * w : -w]])
    if previous <= 0:
        return True
    return (previous - recent) / abs(previous) < cfg.loss_tol


def train_step(model: LGLIModel, dataset: Dataset, batch_triplets: list,
               batch_boxes: Optional[list], lr: float) -> float:
    """One forward/backward/update on a triplet batch; returns the loss value."""
    refs = np.stack([dataset.render(tp.reference.scene_id) for tp in batch_triplets])
    tgts = np.stack([dataset.render(tp.target.scene_id) for tp in batch_triplets])
    tokens = [dataset.tokenize(tp.modification.text_tokens) for tp in batch_triplets]
    if batch_boxes is None:
        masks, ids = None, None
    else:
        masks, ids = build_mask_batch(batch_boxes)
    composed = model.compose_query(refs, tokens, masks, ids)
    targets = model.encode_targets(tgts)
    loss = multi_layer_loss(model, composed, targets)
    value = loss.item()
    if not np.isfinite(value):
        raise TrainingError(
            f"non-finite loss on batch of {len(batch_triplets)} "
            f"(first reference scene {batch_triplets[0].reference.scene_id})"
        )
    backward(loss)
    sgd_step(model.params, lr)
    return value
