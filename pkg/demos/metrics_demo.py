"""
Scoring a reflectance estimate
===============================

Two complementary metrics: WHDR checks sparse human judgements of the
form "point A looks darker than point B"; LMSE compares against dense
ground truth while forgiving a free scale per local window.
"""

import json
from pathlib import Path

import numpy as np

from intrinsics import ImageBuffer
from intrinsics.metrics import lmse, parse_iiw_json, whdr, write_reports_jsonl

OUT = Path(__file__).parent / "output" / "metrics"
OUT.mkdir(parents=True, exist_ok=True)

# --- 1. a ground-truth reflectance and two estimates ---------------------
rng = np.random.default_rng(0)
gt = np.zeros((60, 60, 3))
gt[:, :30] = [0.70, 0.30, 0.30]
gt[:, 30:] = [0.25, 0.55, 0.80]

good = np.clip(0.8 * gt + rng.normal(0, 0.01, gt.shape), 0.01, 1)  # scaled + mild noise
bad = np.clip(0.5 + rng.normal(0, 0.02, gt.shape), 0.01, 1)        # flattened everything

# --- 2. sparse judgements, IIW style --------------------------------------
# the right half (mean 0.53) is brighter than the left (mean 0.43), so a
# human calls the left point darker ("1") for left-vs-right pairs
annotation = {
    "intrinsic_points": [
        {"id": 10, "x": 0.2, "y": 0.5},
        {"id": 11, "x": 0.8, "y": 0.5},
        {"id": 12, "x": 0.2, "y": 0.9},
    ],
    "intrinsic_comparisons": [
        {"point1": 10, "point2": 11, "darker": "1", "darker_score": 1.0},
        {"point1": 11, "point2": 12, "darker": "2", "darker_score": 1.5},
        {"point1": 10, "point2": 12, "darker": "E", "darker_score": 0.8},
    ],
}
ann_path = OUT / "judgements.json"
ann_path.write_text(json.dumps(annotation, indent=2))
judgements = parse_iiw_json(ann_path)
print(f"loaded {len(judgements)} comparisons from {ann_path.name}")

# --- 3. score both estimates ----------------------------------------------
rows = []
for name, estimate in (("good", good), ("bad", bad)):
    w = whdr(ImageBuffer(estimate), judgements)
    d = lmse(estimate, gt)
    rows.append((f"{name}.png", w))
    rows.append((f"{name}.png", d))
    print(f"{name:>5}: WHDR {w.percentage:5.1f}%  ({w.count} judgements)   "
          f"LMSE {d.value:.4f}  ({d.count} windows)")

# scale invariance in action: tripling the estimate changes nothing
w3 = whdr(ImageBuffer(np.minimum(good * 3, 3.0)), judgements)
print(f"\nWHDR of 3x-scaled estimate: {w3.percentage:5.1f}%  (unchanged)")

write_reports_jsonl(OUT / "reports.jsonl", rows)
print(f"machine-readable lines in {OUT / 'reports.jsonl'}")
