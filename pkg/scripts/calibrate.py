"""Calibration run: full model vs concatenation baseline on the default dataset."""

import json
import sys
import time
from pathlib import Path

from lgli.scenes import GenerationConfig, build_splits, Dataset
from lgli.lpvl import train_localizer, LocalizerConfig
from lgli.model import ModelConfig
from lgli.training import TrainConfig, train
from lgli.evaluation import evaluate_model

out = Path(sys.argv[1] if len(sys.argv) > 1 else "/tmp/calib")
out.mkdir(parents=True, exist_ok=True)
seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0
epochs = int(sys.argv[3]) if len(sys.argv) > 3 else 50

ds = Dataset(build_splits(GenerationConfig(seed=0)))
loc_params, _ = train_localizer(ds, LocalizerConfig(epochs=25, seed=0))

for arm, overrides in (("full", {}), ("concat", {"concat_fallback": True})):
    t0 = time.perf_counter()
    mc = ModelConfig(seed=seed, vocabulary=list(ds.vocabulary), **overrides)
    tc = TrainConfig(epochs=epochs, seed=seed, loss_tol=None, min_epochs=1,
                     log_path=str(out / f"{arm}_s{seed}.jsonl"))
    res = train(ds, mc, tc, localizer_params=loc_params)
    metrics = evaluate_model(res.best_model(), ds, "test")
    rec = {
        "arm": arm, "seed": seed,
        "epochs_run": len(res.history), "early": res.stopped_early,
        "best_epoch": res.best_epoch, "best_val_r1": res.best_val_r1,
        "metrics": metrics, "wall_s": round(time.perf_counter() - t0, 1),
    }
    print(json.dumps(rec), flush=True)
    (out / f"{arm}_s{seed}_result.json").write_text(json.dumps(rec, indent=1))
print("DONE")
