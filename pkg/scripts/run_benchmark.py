"""Run the full benchmark for a config and print the table plus model diagnostics.

    python scripts/run_benchmark.py --config configs/default.yaml --out runs/default
"""

import argparse
import sys
import time
from pathlib import Path

from egosynth import evaluation as ev
from egosynth import models as m
from egosynth import simcourt as sc
from egosynth.cli import main


def diagnostics(out, replicates):
    ds = sc.load_sequences(Path(out) / "data")
    print(f"\nNN-retrieval L2 (normalized): {ev.nn_retrieval_error(ds):.4f}")
    for rep in range(replicates):
        d = Path(out) / "models" / f"rep{rep}"
        enc = m.load_model(d / "ego.json", "ego")
        ver = m.load_model(d / "verifier.json", "verifier")
        print(
            f"rep{rep}: encoder L2 {ev.encoder_error(enc, ds.test):.4f}, "
            f"verifier AUC {m.verifier_auc(ver, ds.test, ds.normalizer):.4f}"
        )


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/default.yaml")
    ap.add_argument("--out", default="runs/default")
    args = ap.parse_args()
    t0 = time.perf_counter()
    code = main(["run", "--config", args.config, "--out", args.out, "--assert-orderings"])
    print(f"\npipeline exit code {code} after {time.perf_counter() - t0:.0f} s")
    from egosynth.config import load_config

    diagnostics(args.out, load_config(args.config).replicates)
    sys.exit(code)
