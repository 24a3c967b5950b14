#!/usr/bin/env python3
"""Rebuild data/statlog/ from the Statlog (Landsat Satellite) corpus.

The UCI archive is not always reachable, so this pulls the 6435-row corpus
bundled in the `keel_ds` wheel on PyPI and re-partitions it into a 4435-row
training file and a 2000-row test file (the UCI partition sizes) with a fixed
shuffle. Output lines are 37 space-separated integers, label last, which is the
same layout as the UCI sat.trn / sat.tst files.

    pip download --no-deps keel_ds==0.2.5 -d /tmp/keel
    python3 scripts/extract_statlog.py /tmp/keel/keel_ds-0.2.5-py3-none-any.whl
"""
import pathlib
import random
import sys
import zipfile

MEMBER = "keel_ds/data/balanced/raw/satimage.dat"
SHUFFLE_SEED = 4435
N_TRAIN = 4435


def main() -> int:
    if len(sys.argv) != 2:
        print(__doc__)
        return 1
    raw = zipfile.ZipFile(sys.argv[1]).read(MEMBER).decode()
    rows = []
    for line in raw.splitlines():
        line = line.strip()
        if not line or line.startswith("@"):
            continue
        tokens = [t.strip() for t in line.split(",")]
        if len(tokens) != 37:
            raise SystemExit(f"unexpected row width {len(tokens)}")
        rows.append(" ".join(tokens))
    if len(rows) != 6435:
        raise SystemExit(f"expected 6435 rows, got {len(rows)}")
    random.Random(SHUFFLE_SEED).shuffle(rows)
    out = pathlib.Path(__file__).resolve().parent.parent / "data" / "statlog"
    out.mkdir(parents=True, exist_ok=True)
    (out / "satimage_train.txt").write_text("\n".join(rows[:N_TRAIN]) + "\n")
    (out / "satimage_test.txt").write_text("\n".join(rows[N_TRAIN:]) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
