"""Fill the alpha-sweep per-run caches (stock data, 30-epoch cap, seed 0)."""

import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))

import test_acceptance as acc  # noqa: E402
from lgli.scenes import Dataset, GenerationConfig, build_splits  # noqa: E402


def main() -> int:
    dataset = Dataset(build_splits(GenerationConfig(seed=0)))
    loc_path = str(Path(acc.ARTIFACT_DIR) / "default_localizer.ckpt")
    # run the decision-relevant middle of the grid first
    order = [1e-4, 1e-3, 1e-5, 1e-2, 1e-6, 1e-1, 1e-7, 1e-8, 1e-9]
    for alpha in order:
        cache = Path(acc.ARTIFACT_DIR) / f"run_sweep_a{alpha:g}_s0.json"
        if cache.exists():
            print(f"cached   alpha={alpha:g}", flush=True)
            continue
        t0 = time.time()
        rec = acc._sweep_run_cached(dataset, loc_path, alpha)
        print(f"finished alpha={alpha:g}: R@1 {rec['metrics']['R@1']:.1f} "
              f"({rec['epochs_run']} epochs, {time.time() - t0:.0f}s)", flush=True)
    print("SWEEP CACHED", flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
