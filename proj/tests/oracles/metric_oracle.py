"""Mean angular error of a constant prediction against uniform labels.

Labels are a 9 x 9 grid spanning [-0.7, 0.7] in pitch and yaw. The angle is
computed from the spherical law of cosines on (pitch, yaw) as latitude and
longitude, which is a different route from the 3-vector dot product used in
the library.
"""

import json
import math
from pathlib import Path

PRED = (0.1, -0.2)


def angle_deg(a, b):
    (p1, y1), (p2, y2) = a, b
    c = math.sin(p1) * math.sin(p2) + math.cos(p1) * math.cos(p2) * math.cos(y1 - y2)
    return math.degrees(math.acos(max(-1.0, min(1.0, c))))


def main():
    grid = [-0.7 + 1.4 * i / 8 for i in range(9)]
    labels = [(p, y) for p in grid for y in grid]
    mae = sum(angle_deg(PRED, t) for t in labels) / len(labels)
    out = {"prediction": list(PRED), "labels": [list(t) for t in labels], "mae_deg": mae}
    Path(__file__).with_name("metric_cases.json").write_text(json.dumps(out, indent=1) + "\n")


if __name__ == "__main__":
    main()
