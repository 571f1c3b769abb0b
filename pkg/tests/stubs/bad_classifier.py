"""Classifier stub answering with an index outside every label space."""

import json
import sys

for line in sys.stdin:
    req = json.loads(line)
    print(
        json.dumps({"id": req["id"], "label_index": 99, "confidence": 0.9}),
        flush=True,
    )
