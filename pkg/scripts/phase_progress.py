"""Per-phase data term of the descent on a finished run.

For each replicate, reports the mean data term ||phi_j - h||^2 at the start
and end of every branch phase, the share of test sequences where it drops,
and the mean size of the verifier pull |grad log psi| at the start, which
sets the equilibrium offset |grad log psi| / 2 from phi_j.

    python scripts/phase_progress.py --config configs/default.yaml --out runs/default
"""

import argparse
from pathlib import Path

import numpy as np

from egosynth import evaluation as ev
from egosynth import models as m
from egosynth import simcourt as sc
from egosynth import synthesis as sy
from egosynth.config import ROLES, load_config


def load_pipeline(out, rep):
    d = Path(out) / "models" / f"rep{rep}"
    p = {r: m.load_model(d / f"{r}.json", r) for r in ROLES}
    return ev.Pipeline(p["ego"], p["future"], p["verifier"], p["recurrent"], rep)


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/default.yaml")
    ap.add_argument("--out", default="runs/default")
    args = ap.parse_args()
    cfg = load_config(args.config)
    ds = sc.load_sequences(Path(args.out) / "data")
    for rep in range(cfg.replicates):
        pipe = load_pipeline(args.out, rep)
        starts, phis = ev.first_frame_inputs(pipe, ds.test)
        res = sy.synthesize_batch(starts, phis, pipe.verifier, cfg.synthesis)
        pd = res.phase_data
        psi, dpsi = m.verify_with_grad(pipe.verifier, starts)
        pull = np.linalg.norm(dpsi / psi[:, None], axis=1).mean()
        print(f"rep{rep}: mean |grad log psi| at start {pull:.3f}")
        for j in range(pd.shape[0]):
            a, b = pd[j, 0].mean(), pd[j, 1].mean()
            frac = np.mean(pd[j, 1] < pd[j, 0])
            print(f"  phase {j + 1}: {a:.4f} -> {b:.4f}  drops for {frac:.0%} of sequences")
