"""Classifier stub: fixed label per family, proving family routing works."""

import json
import sys

for line in sys.stdin:
    req = json.loads(line)
    index = 2 if req["family"] == "injection" else 1
    print(
        json.dumps({"id": req["id"], "label_index": index, "confidence": 0.9}),
        flush=True,
    )
