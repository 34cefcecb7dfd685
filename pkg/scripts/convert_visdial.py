"""Convert a VisDial-style release into the dataset JSON and VDF1 feature file this package reads.

Dialog file: the release JSON with ``data.questions``, ``data.answers`` and
``data.dialogs[].dialog[]`` rounds holding ``question``/``answer_options``/``gt_index``
indices. Splits whose rounds lack ``gt_index`` (the blind test split) cannot be
converted. Optional dense annotations: a list of ``{image_id, round_id (1-based),
gt_relevance}`` records.

Region features: a directory of ``<image_id>.npy`` arrays, one ``K x D`` array per
image, produced by whatever detector you ran.

    python scripts/convert_visdial.py dialogs --release visdial_1.0_val.json \\
        --dense visdial_1.0_val_dense_annotations.json --out val.json
    python scripts/convert_visdial.py features --npy-dir feats/val --out val.vdf
"""
import argparse
import json
from pathlib import Path

import numpy as np

from vdr.data import ObjectFeatureSet, write_features


def convert_dialogs(release_path, out_path, dense_path=None, limit=None):
    raw = json.loads(Path(release_path).read_text(encoding="utf-8"))["data"]
    questions, answers = raw["questions"], raw["answers"]
    dense = {}
    if dense_path:
        for rec in json.loads(Path(dense_path).read_text(encoding="utf-8")):
            dense[(int(rec["image_id"]), int(rec["round_id"]) - 1)] = rec["gt_relevance"]
    dialogs, n_cand, n_rounds = [], None, None
    for idx, d in enumerate(raw["dialogs"][:limit]):
        rounds = []
        for t, r in enumerate(d["dialog"]):
            if "gt_index" not in r:
                raise SystemExit(f"dialog {idx} round {t} has no gt_index; test splits cannot be converted")
            rounds.append({"question": questions[r["question"]] + "?",
                           "candidates": [answers[a] for a in r["answer_options"]],
                           "gt_index": int(r["gt_index"]),
                           "relevance": dense.get((int(d["image_id"]), t))})
        n_cand = n_cand or len(rounds[0]["candidates"])
        n_rounds = n_rounds or len(rounds)
        dialogs.append({"dialog_id": idx, "image_id": int(d["image_id"]), "caption": d["caption"],
                        "rounds": rounds})
    out = {"version": 1, "n_cand": n_cand, "n_rounds": n_rounds, "dialogs": dialogs}
    Path(out_path).write_text(json.dumps(out), encoding="utf-8")
    print(f"wrote {len(dialogs)} dialogs ({sum(r['relevance'] is not None for d in dialogs for r in d['rounds'])} "
          f"rounds with dense relevance) to {out_path}")


def convert_features(npy_dir, out_path):
    store = {}
    for path in sorted(Path(npy_dir).glob("*.npy")):
        image_id = int(path.stem)
        store[image_id] = ObjectFeatureSet(image_id, np.load(path).astype(np.float64))
    write_features(out_path, store)
    print(f"wrote features for {len(store)} images to {out_path}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="what", required=True)
    d = sub.add_parser("dialogs")
    d.add_argument("--release", required=True)
    d.add_argument("--dense")
    d.add_argument("--limit", type=int)
    d.add_argument("--out", required=True)
    f = sub.add_parser("features")
    f.add_argument("--npy-dir", required=True)
    f.add_argument("--out", required=True)
    args = ap.parse_args()
    if args.what == "dialogs":
        convert_dialogs(args.release, args.out, args.dense, args.limit)
    else:
        convert_features(args.npy_dir, args.out)


if __name__ == "__main__":
    main()
