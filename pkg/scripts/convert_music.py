"""Convert a polyphonic music corpus to the sequence JSON format.

Input is the common pickle layout ``{"train": [...], "valid": [...],
"test": [...]}`` where each piece is a list of chords and each chord a list
of MIDI note numbers.  Notes 21..108 map to indices 0..87.  Pickles can run
arbitrary code on load, so only convert files you trust.

``--synthetic N`` writes the built-in synthetic chorales instead.
"""
import argparse
import json
import pickle
from pathlib import Path

from implicit_bp import data as ds

LOWEST_MIDI = 21


def convert(doc, merge_valid: bool):
    def piece(chords):
        return [sorted({int(n) - LOWEST_MIDI for n in chord if LOWEST_MIDI <= int(n) < LOWEST_MIDI + ds.MUSIC_DIM})
                for chord in chords]

    train = [piece(p) for p in doc["train"]]
    if merge_valid:
        train += [piece(p) for p in doc.get("valid", [])]
    return {"dim": ds.MUSIC_DIM, "train": train, "test": [piece(p) for p in doc.get("test", [])]}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("source", nargs="?", help="pickle file")
    ap.add_argument("out", help="output JSON path")
    ap.add_argument("--merge-valid", action="store_true", help="fold the validation split into train")
    ap.add_argument("--synthetic", type=int, default=None, metavar="N")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if args.synthetic is not None:
        ds.save_sequences_json(ds.synth_chorales(args.synthetic, seed=args.seed), args.out)
    else:
        if args.source is None:
            ap.error("give a source pickle or --synthetic N")
        with open(args.source, "rb") as f:
            doc = pickle.load(f)
        Path(args.out).write_text(json.dumps(convert(doc, args.merge_valid)))
    loaded = ds.load_sequences_json(args.out)
    print(f"wrote {args.out}: {len(loaded.train)} train / {len(loaded.test)} test pieces")


if __name__ == "__main__":
    main()
