"""Fill the acceptance suite's per-run caches, highest-value runs first.

Reuses the fixture helpers from tests/test_acceptance.py so the cached
artifacts are exactly what the suite would have produced itself.
"""

import json
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))

import test_acceptance as acc  # noqa: E402
from lgli.lpvl import LocalizerConfig, train_localizer  # noqa: E402
from lgli.scenes import Dataset, GenerationConfig, build_splits  # noqa: E402

QUEUE = [
    ("full", 0), ("concat", 0),
    ("full", 1), ("concat", 1),
    ("full", 2), ("concat", 2),
    ("no-ca", 1), ("no-lpvl", 1),
    ("no-ca", 2), ("no-lpvl", 2),
    ("no-ca", 0), ("no-lpvl", 0),   # usually cached already
]


def main() -> int:
    dataset = Dataset(build_splits(GenerationConfig(seed=0)))
    loc_ckpt = Path(acc.ARTIFACT_DIR) / "default_localizer.ckpt"
    if not loc_ckpt.exists():
        params, _ = train_localizer(dataset, LocalizerConfig(seed=0))
        from lgli.checkpoint import save_checkpoint

        save_checkpoint(loc_ckpt, params, {"kind": "localizer",
                                           "vocabulary": list(dataset.vocabulary)})
    for arm, seed in QUEUE:
        cache = Path(acc.ARTIFACT_DIR) / f"run_default_{arm}_s{seed}.json"
        if cache.exists():
            print(f"cached   {arm} seed {seed}", flush=True)
            continue
        t0 = time.time()
        rec = acc._arm_cached(dataset, str(loc_ckpt), arm, seed)
        print(f"finished {arm} seed {seed}: R@1 {rec['metrics']['R@1']:.1f} "
              f"({rec['epochs_run']} epochs, {time.time() - t0:.0f}s)", flush=True)
    print("ALL RUNS CACHED", flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
