import argparse
import json
import logging


def run(fn, description, default_seeds):
    ap = argparse.ArgumentParser(description=description)
    ap.add_argument("--seeds", type=int, nargs="+", default=default_seeds)
    ap.add_argument("--out", help="write results as JSON lines to this file")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    rows = []
    for seed in args.seeds:
        r = fn(seed)
        print(json.dumps(r))
        rows.append(r)
    if args.out:
        with open(args.out, "w") as f:
            f.writelines(json.dumps(r) + "\n" for r in rows)
