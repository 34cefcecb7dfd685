"""Compare the two readings of the gated scorer on the synthetic corpus.

`gated` applies a sigmoid-gated tanh layer to the elementwise context/candidate
product; `gated_scalar` squashes the plain dot product through w * tanh(a * s + b).

    python scripts/wt_ablation.py --seeds 0 1 2
"""
import argparse
import tempfile

from vdr.experiment import DeskConfig, run_desk
from vdr.metrics import format_table


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--epochs", type=int, default=DeskConfig.epochs)
    args = ap.parse_args()
    rows = []
    for seed in args.seeds:
        for variant in ("gated", "gated_scalar"):
            cfg = DeskConfig(epochs=args.epochs, seed=seed, models=("mn_rcnn_wt",), wt_variant=variant)
            with tempfile.TemporaryDirectory() as tmp:
                res = run_desk(tmp, cfg)
            rows.append((f"{variant} seed={seed}", res.heldout["mn_rcnn_wt"]))
            print(f"{variant} seed={seed}: train R@1 {res.train['mn_rcnn_wt'].recall_at[1]:.3f}", flush=True)
    print()
    print("held-out synthetic split")
    print(format_table(rows))


if __name__ == "__main__":
    main()
