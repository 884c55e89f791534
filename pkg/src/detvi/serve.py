"""Child side of the external predictor protocol for a saved linear model.

Usage: ``python -m detvi.serve model.json``. Reads request blocks from stdin
until end of input, answers each on stdout, exits 0.
"""

from __future__ import annotations

import re
import sys

import numpy as np

from .predictors import LinearModel

HEADER = re.compile(r"#predict\s+n=(\d+)\s+p=(\d+)\s+q=(\d+)\s*$")


def serve(model: LinearModel, stdin=None, stdout=None) -> int:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    while True:
        header = stdin.readline()
        if not header:
            return 0
        if not header.strip():
            continue
        m = HEADER.match(header.strip())
        if not m:
            print(f"bad header: {header.strip()!r}", file=sys.stderr)
            return 1
        n, p, q = (int(g) for g in m.groups())
        if p != model.p or q != model.q:
            print(f"model has p={model.p}, q={model.q}; request has p={p}, q={q}", file=sys.stderr)
            return 1
        X = np.array([[float(c) for c in stdin.readline().split(",")] for _ in range(n)]).reshape(n, p)
        out = model.predict(X)
        stdout.write("".join(",".join(format(v, ".17g") for v in row) + "\n" for row in out))
        stdout.write("#end\n")
        stdout.flush()


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1:
        print("usage: python -m detvi.serve MODEL.json", file=sys.stderr)
        return 2
    return serve(LinearModel.load(argv[0]))


if __name__ == "__main__":
    sys.exit(main())
