"""Stdio scoring adapter exposing the native modulation-ratio metric.

Run as ``python -m metricmask.srmr_adapter``. Reads one JSON record per
line from stdin ({"id", "path"}), writes one {"id", "score"} record per
request to stdout. Exists so the external-adapter path can be exercised
end to end against a judge whose scores are known exactly.
"""
from __future__ import annotations

import json
import sys

from .dsp import read_wav
from .srmr import srmr


def main() -> int:
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
            score = srmr(read_wav(request["path"]))
            sys.stdout.write(json.dumps({"id": request["id"], "score": score}) + "\n")
            sys.stdout.flush()
        except Exception as exc:  # surface the reason on stderr and die
            sys.stderr.write(f"adapter failure: {exc}\n")
            return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
