"""Detector stub violating the contract: emits an impossible score."""

import json
import sys

for line in sys.stdin:
    req = json.loads(line)
    print(
        json.dumps(
            {
                "id": req["id"],
                "detections": [
                    {"x": 1.0, "y": 1.0, "w": 4.0, "h": 4.0,
                     "category": "Hook", "score": 1.5}
                ],
            }
        ),
        flush=True,
    )
