"""Retrieval evaluation: gallery index, ranked results, recall, experiment arms.

The gallery is the split's deduplicated target pool; scores are dot
products of processed final features, ties broken by ascending scene id.
Multi-run harnesses (ablation arms, alpha sweep) fan out over processes
when more than one CPU is available.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .model import LGLIModel, ModelConfig
from .scenes import Dataset, Manifest
from .training import TrainConfig, train


class EvaluationError(Exception):
    pass


@dataclass
class RetrievalIndex:
    features: np.ndarray      # (G, final_dim) processed target features
    scene_ids: list           # gallery row -> scene id
    split: str

    def __post_init__(self):
        if self.features.shape[0] != len(self.scene_ids):
            raise EvaluationError("index rows and id list disagree")


@dataclass
class RankedResult:
    query_index: int
    ranking: list                               # [(scene_id, score)] best first
    rank_of_first_correct: Optional[int] = None


def build_index(model: LGLIModel, dataset: Dataset, split: str,
                batch_size: int = 64) -> RetrievalIndex:
    """Encode every gallery target once, in evaluation mode."""
    pool = dataset.target_pool(split)
    if not pool:
        raise EvaluationError(f"split {split!r} has no target images")
    rows = []
    from .tensor import no_grad

    for start in range(0, len(pool), batch_size):
        chunk = pool[start : start + batch_size]
        imgs = np.stack([dataset.render(sid) for sid in chunk])
        with no_grad():
            encoded = model.encode_targets(imgs)
        rows.append(model.final_feature(encoded))
    return RetrievalIndex(np.concatenate(rows, axis=0), list(pool), split)


def rank_scores(index: RetrievalIndex, query_feature: np.ndarray) -> list:
    """Full gallery ranking by score desc, scene id asc on ties."""
    scores = index.features @ query_feature
    ids = np.asarray(index.scene_ids)
    order = np.lexsort((ids, -scores))
    return [(int(ids[i]), float(scores[i])) for i in order]


def retrieve_topk(model: LGLIModel, dataset: Dataset, triplet, index: RetrievalIndex,
                  k: int = 10, box=None) -> RankedResult:
    """Compose one query and rank the gallery; k clamps the returned list only."""
    if k < 1:
        raise EvaluationError("k must be >= 1")
    feats = model.compose_eval(dataset, [triplet],
                               boxes=None if box is None else [box])
    return _result_from_feature(0, feats[0], index, triplet.target.scene_id, k)


def retrieve_topk_batch(model: LGLIModel, dataset: Dataset, triplets: list,
                        index: RetrievalIndex, k: int = 10,
                        boxes: Optional[list] = None) -> list:
    feats = model.compose_eval(dataset, triplets, boxes=boxes)
    return [
        _result_from_feature(i, feats[i], index, tp.target.scene_id, k)
        for i, tp in enumerate(triplets)
    ]


def _result_from_feature(qidx: int, feature: np.ndarray, index: RetrievalIndex,
                         correct_id: int, k: int) -> RankedResult:
    ranking = rank_scores(index, feature)
    rank = None
    for pos, (sid, _score) in enumerate(ranking, start=1):
        if sid == correct_id:
            rank = pos
            break
    return RankedResult(qidx, ranking[:k], rank)


def recall_at(results: list, n: int) -> float:
    """Percentage of queries whose first correct hit lands in the top n."""
    if n < 1:
        raise EvaluationError("N must be >= 1")
    if not results:
        raise EvaluationError("no results to score")
    hits = sum(1 for r in results if r.rank_of_first_correct is not None
               and r.rank_of_first_correct <= n)
    return 100.0 * hits / len(results)


def recall_table(results: list, ns=(1, 5, 10)) -> dict:
    table = {f"R@{n}": recall_at(results, n) for n in ns}
    table["mean"] = float(np.mean(list(table.values())))
    return table


def evaluate_model(model: LGLIModel, dataset: Dataset, split: str = "test",
                   ns=(1, 5, 10)) -> dict:
    index = build_index(model, dataset, split)
    results = retrieve_topk_batch(model, dataset, dataset.split_triplets(split),
                                  index, k=max(ns))
    return recall_table(results, ns)


# ---------------------------------------------------------------------------
# experiment harnesses
# ---------------------------------------------------------------------------

ABLATION_ARMS = (
    ("full", {}),
    ("w/o LPVL", {"disable_mask": True}),
    ("w/o CA", {"disable_cross_attention": True}),
    ("w/o TILA", {"concat_fallback": True}),
)


def _run_single_arm(args: dict) -> dict:
    import time

    manifest = Manifest.from_json_dict(args["manifest"])
    dataset = Dataset(manifest)
    model_cfg = ModelConfig.from_dict(args["model_config"])
    train_cfg = TrainConfig(**args["train_config"])
    localizer = None
    if args.get("localizer_path"):
        from .checkpoint import load_checkpoint

        localizer, _ = load_checkpoint(args["localizer_path"])
    t0 = time.perf_counter()
    result = train(dataset, model_cfg, train_cfg, localizer_params=localizer)
    wall_s = time.perf_counter() - t0
    final = result.model
    metrics = evaluate_model(final, dataset, "test")
    out = {
        "arm": args["arm"],
        "seed": train_cfg.seed,
        "alpha": model_cfg.alpha,
        "metrics": metrics,
        "epochs_run": len(result.history),
        "stopped_early": result.stopped_early,
        "best_epoch": result.best_epoch,
        "best_val_r1": result.best_val_r1,
        "wall_s": round(wall_s, 1),
        "history": result.history,
    }
    if args.get("save_dir"):
        path = os.path.join(
            args["save_dir"],
            f"{args['arm'].replace('/', '').replace(' ', '_')}_seed{train_cfg.seed}.ckpt",
        )
        final.save(path, extra_config={"train": args["train_config"], "metrics": metrics})
        out["checkpoint"] = path
    return out


def run_training_arms(dataset: Dataset, jobs: list, max_workers: Optional[int] = None) -> list:
    """Train several (config, seed) arms, in parallel when CPUs allow."""
    manifest_doc = dataset.manifest.to_json_dict()
    for job in jobs:
        job["manifest"] = manifest_doc
    if max_workers is None:
        max_workers = min(len(jobs), os.cpu_count() or 1)
    if max_workers <= 1:
        return [_run_single_arm(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(_run_single_arm, jobs))


def run_ablation(dataset: Dataset, base_model: ModelConfig, base_train: TrainConfig,
                 seeds=(0, 1, 2), localizer_path: Optional[str] = None,
                 save_dir: Optional[str] = None, max_workers=None) -> dict:
    """Train the four arms per seed and report R@{1,5,10} plus averages."""
    jobs = []
    for arm_name, overrides in ABLATION_ARMS:
        for seed in seeds:
            mc = replace(base_model, seed=seed, **overrides)
            tc = replace(base_train, seed=seed)
            jobs.append({
                "arm": arm_name,
                "model_config": mc.to_dict(),
                "train_config": asdict_train(tc),
                "localizer_path": localizer_path,
                "save_dir": save_dir,
            })
    raw = run_training_arms(dataset, jobs, max_workers=max_workers)
    return summarize_arms(raw)


def sweep_alpha(dataset: Dataset, base_model: ModelConfig, base_train: TrainConfig,
                values=tuple(10.0 ** -e for e in range(1, 10)),
                seeds=(0,), localizer_path: Optional[str] = None,
                max_workers=None) -> dict:
    """One trained model per mask-strength value; plot-ready rows."""
    if not values:
        raise EvaluationError("alpha sweep needs at least one value")
    jobs = []
    for alpha in values:
        for seed in seeds:
            mc = replace(base_model, alpha=float(alpha), seed=seed)
            tc = replace(base_train, seed=seed)
            jobs.append({
                "arm": f"alpha={alpha:g}",
                "model_config": mc.to_dict(),
                "train_config": asdict_train(tc),
                "localizer_path": localizer_path,
            })
    raw = run_training_arms(dataset, jobs, max_workers=max_workers)
    return summarize_arms(raw)


def asdict_train(tc: TrainConfig) -> dict:
    return {
        "lr": tc.lr, "epochs": tc.epochs, "batch_size": tc.batch_size,
        "seed": tc.seed, "val_every": tc.val_every, "loss_tol": tc.loss_tol,
        "loss_window": tc.loss_window, "min_epochs": tc.min_epochs,
        "single_thread": tc.single_thread, "log_path": tc.log_path,
    }


def summarize_arms(raw_results: list) -> dict:
    """Group per-arm runs, average metrics across seeds."""
    arms: dict = {}
    for rec in raw_results:
        arms.setdefault(rec["arm"], []).append(rec)
    summary = {}
    for arm, recs in arms.items():
        keys = recs[0]["metrics"].keys()
        summary[arm] = {
            "mean": {k: float(np.mean([r["metrics"][k] for r in recs])) for k in keys},
            "runs": recs,
        }
    return summary


def format_table(summary: dict, ns=("R@1", "R@5", "R@10", "mean")) -> str:
    """Aligned plain-text table of seed-averaged metrics."""
    name_w = max(len(a) for a in summary) + 2
    header = "arm".ljust(name_w) + "".join(h.rjust(9) for h in ns)
    lines = [header, "-" * len(header)]
    for arm, rec in summary.items():
        row = arm.ljust(name_w)
        for h in ns:
            row += f"{rec['mean'][h]:9.1f}"
        lines.append(row)
    return "\n".join(lines)


def save_summary(summary: dict, path) -> None:
    slim = {
        arm : {
            "mean": rec["mean"],
            "runs": [
                {k: v for k, v in run.items() if k != "history"}
                for run in rec["runs"]
            ],
        }
        for arm, rec in summary.items()
    }
    with open(path, "w") as fh:
        json.dump(slim, fh, indent=1)
