"""Detector stub that hangs on the first request and answers afterwards.

The bridge's request ids keep increasing across respawns, so after the
timeout kills the first process the replacement sees id >= 2 and behaves.
"""

import json
import sys
import time

for line in sys.stdin:
    req = json.loads(line)
    if req["id"] == 1:
        time.sleep(30)
    print(json.dumps({"id": req["id"], "detections": []}), flush=True)
