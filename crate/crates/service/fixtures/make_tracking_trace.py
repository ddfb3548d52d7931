"""Writes tracking.jsonl: a pointer held by an operator standing at ORIGIN
sweeps the floor along a 4 m course with one turn, then rests on the table."""
import json
import math

ORIGIN = [1.0, 1.5, 1.7]
SPEED = 0.15
RATE = 10.0
WAYPOINTS = [(1.0, 0.0, 0.0), (3.0, 0.0, 0.0), (3.0, 2.0, 0.0)]
TABLE = (3.0, 2.35, 0.75)

def points():
    yield 0.0, WAYPOINTS[0]
    t = 0.0
    for a, b in zip(WAYPOINTS, WAYPOINTS[1:]):
        n = int(round(math.dist(a, b) / SPEED * RATE))
        for i in range(1, n + 1):
            t += 1.0 / RATE
            s = i / n
            yield t, tuple(a[k] + s * (b[k] - a[k]) for k in range(3))
    yield t + 1.0 / RATE, TABLE

with open("tracking.jsonl", "w") as f:
    f.write("# generated by make_tracking_trace.py\n")
    for t, p in points():
        ev = {"t": round(t, 3), "event": "emitter_aim", "origin": ORIGIN, "target": [round(x, 4) for x in p]}
        f.write(json.dumps(ev) + "\n")
