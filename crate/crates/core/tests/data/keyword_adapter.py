#!/usr/bin/env python3
"""Reference adapter: p(pos) = sigmoid(#good - #bad), spoken over stdio.

Optional argument: a file to which the size of every received message is
appended, one per line. The token "boom" makes the adapter report an error.
"""
import json
import math
import sys

log = open(sys.argv[1], "a") if len(sys.argv) > 1 else None


def answer(req):
    toks = req["tokens"]
    if "boom" in toks:
        return {"id": req["id"], "error": "cannot score boom"}
    z = toks.count("good") - toks.count("bad")
    p = 1.0 / (1.0 + math.exp(-z))
    return {"id": req["id"], "probs": {"neg": 1.0 - p, "pos": p}}


for line in sys.stdin:
    msg = json.loads(line)
    if "batch" in msg:
        # answer out of order to exercise pairing by id
        out = {"batch": [answer(r) for r in reversed(msg["batch"])]}
        size = len(msg["batch"])
    else:
        out = answer(msg)
        size = 1
    if log:
        log.write(f"{size}\n")
        log.flush()
    sys.stdout.write(json.dumps(out) + "\n")
    sys.stdout.flush()
