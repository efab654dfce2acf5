"""Train one experiment arm at the default config and record its metrics."""

import json
import sys
import time
from pathlib import Path

from lgli.checkpoint import load_checkpoint, save_checkpoint
from lgli.evaluation import evaluate_model
from lgli.lpvl import LocalizerConfig, train_localizer
from lgli.model import ModelConfig
from lgli.scenes import Dataset, GenerationConfig, build_splits
from lgli.training import TrainConfig, train

arm = sys.argv[1]            # full | no-lpvl | no-ca | concat
seed = int(sys.argv[2])
out = Path(sys.argv[3])
out.mkdir(parents=True, exist_ok=True)

overrides = {
    "full": {},
    "no-lpvl": {"disable_mask": True},
    "no-ca": {"disable_cross_attention": True},
    "concat": {"concat_fallback": True},
}[arm]

ds = Dataset(build_splits(GenerationConfig(seed=0)))
loc_ckpt = out / "localizer.ckpt"
if loc_ckpt.exists():
    loc_params, _ = load_checkpoint(loc_ckpt)
else:
    loc_params, _ = train_localizer(ds, LocalizerConfig(seed=0))
    save_checkpoint(loc_ckpt, loc_params, {"kind": "localizer",
                                           "vocabulary": list(ds.vocabulary)})

mc = ModelConfig(seed=seed, vocabulary=list(ds.vocabulary), **overrides)
tc = TrainConfig(seed=seed, log_path=str(out / f"{arm}_s{seed}.jsonl"))
t0 = time.perf_counter()
res = train(ds, mc, tc, localizer_params=None if arm == "concat" else loc_params)
metrics = evaluate_model(res.model, ds, "test")
rec = {
    "arm": arm, "seed": seed, "metrics": metrics,
    "epochs_run": len(res.history), "stopped_early": res.stopped_early,
    "best_val_r1": res.best_val_r1, "best_epoch": res.best_epoch,
    "wall_s": round(time.perf_counter() - t0, 1),
}
(out / f"{arm}_s{seed}_result.json").write_text(json.dumps(rec, indent=1))
res.model.save(out / f"{arm}_s{seed}.ckpt", extra_config={"metrics": metrics})
print(json.dumps(rec), flush=True)
