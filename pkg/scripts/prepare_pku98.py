"""Build Bakeoff-style segmented files from the People's Daily (Jan 1998) corpus.

The PKU Bakeoff training data is drawn from this corpus. A POS-tagged copy
ships inside the snownlp source distribution (snownlp/tag/199801.txt); this
script fetches that sdist with pip (or uses --sdist), strips the POS tags and
writes one paragraph per line, words separated by single spaces:

    data/pku98/train.utf8    first --train lines
    data/pku98/heldout.utf8  the following --heldout lines
    data/pku98/full.utf8     every line

Usage: python scripts/prepare_pku98.py [--sdist snownlp-0.12.3.tar.gz] [--out data/pku98]
"""

import argparse
import glob
import os
import subprocess
import sys
import tarfile
import tempfile

MEMBER = "snownlp/tag/199801.txt"


def fetch_sdist(workdir):
    subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps", "--no-binary", ":all:",
                    "--timeout", "120", "-d", workdir, "snownlp==0.12.3"], check=True)
    found = glob.glob(os.path.join(workdir, "snownlp-*.tar.gz"))
    if not found:
        sys.exit("pip did not produce a snownlp sdist")
    return found[0]


def read_tagged(sdist):
    with tarfile.open(sdist) as tar:
        member = next(m for m in tar.getmembers() if m.name.endswith(MEMBER))
        raw = tar.extractfile(member).read().decode("utf-8")
    lines = []
    for line in raw.splitlines():
        words = [tok.rsplit("/", 1)[0] for tok in line.split()]
        words = [w for w in words if w]
        if words:
            lines.append(" ".join(words))
    return lines


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--sdist", help="path to snownlp-*.tar.gz (downloaded when omitted)")
    ap.add_argument("--out", default="data/pku98")
    ap.add_argument("--train", type=int, default=3000)
    ap.add_argument("--heldout", type=int, default=500)
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        sdist = args.sdist or fetch_sdist(tmp)
        lines = read_tagged(sdist)
    os.makedirs(args.out, exist_ok=True)
    parts = {
        "train.utf8": lines[:args.train],
        "heldout.utf8": lines[args.train:args.train + args.heldout],
        "full.utf8": lines,
    }
    for name, chunk in parts.items():
        with open(os.path.join(args.out, name), "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(line + "\n" for line in chunk)
        print(f"{name}: {len(chunk)} lines, {sum(len(l.replace(' ', '')) for l in chunk)} characters")


if __name__ == "__main__":
    main()
