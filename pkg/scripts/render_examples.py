"""SVG panels comparing real test sequences with their generations.

    python scripts/render_examples.py --out runs/default --count 4
"""

import argparse
from pathlib import Path

from egosynth import jsonio
from egosynth import simcourt as sc
from egosynth.render import render_svg

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/default")
    ap.add_argument("--count", type=int, default=4)
    ap.add_argument("--replicate", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.out)
    ds = sc.load_sequences(out / "data")
    target = out / "figures"
    for s in ds.test[: args.count]:
        seqs = [s]
        for method in ("noverifier", "full"):
            path = out / "generated" / f"rep{args.replicate}" / method / f"{s.id}.jsonl"
            if path.exists():
                g = sc.read_sequences(path)[0]
                seqs.append(sc.Sequence(f"{s.id}-{method}", g.configs))
        svg = render_svg(seqs, ds.params, title=f"{s.id}: real, no verifier, full")
        jsonio.atomic_write_text(target / f"{s.id}.svg", svg)
    jsonio.atomic_write_text(target / "starts_ends.svg", render_svg(ds.train + ds.test, ds.params, scatter=True))
    print(f"wrote {args.count + 1} figures to {target}")
