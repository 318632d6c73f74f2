#!/usr/bin/env python3
"""Regenerates fixtures/montages/*.json.

Positions use an azimuthal-equidistant projection of the extended 10-20
grid: polar angle (degrees from Cz) and azimuth (from nose, toward the right
ear) per row, divided by 100 so the 90-degree ring lands at radius 0.9.
"""
import json
import math
import os
import re
import sys

# row prefix -> (polar angle on the midline, signed: +front, azimuth of the
# 10% ring point at the row's lateral end)
ROWS = {
    "AF": (54, 36), "AFF": (45, 45), "F": (36, 54), "FFC": (27, 63), "FFT": (27, 63),
    "FC": (18, 72), "FT": (18, 72), "FCC": (9, 81), "FTT": (9, 81), "C": (0, 90), "T": (0, 90),
    "CCP": (-9, 99), "TTP": (-9, 99), "CP": (-18, 108), "TP": (-18, 108), "CPP": (-27, 117),
    "TPP": (-27, 117), "P": (-36, 126), "PPO": (-45, 135), "PO": (-54, 144), "POO": (-63, 153),
}
SPECIAL = {
    "Fp1": (72, -18), "Fp2": (72, 18), "Fpz": (72, 0),
    "O1": (72, -162), "O2": (72, 162), "Oz": (72, 180),
    "O9": (90, -160), "O10": (90, 160), "OI1h": (81, -171), "OI2h": (81, 171),
}


def ring(polar, az):
    a = math.radians(az)
    return polar * math.sin(a), polar * math.cos(a)


def position(label):
    if label in SPECIAL:
        return ring(*SPECIAL[label])
    m = re.fullmatch(r"([A-Za-z]+?)(z|\d+)(h?)", label)
    prefix, num, half = m.group(1), m.group(2), m.group(3)
    b_mid, az_end = ROWS[prefix]
    mid = (0.0, float(b_mid))
    if num == "z":
        return mid
    n = int(num)
    frac = ((n + 1) // 2) / 4.0 - (0.125 if half else 0.0)
    ex, ey = ring(72, az_end)
    if n % 2 == 1:
        ex = -ex
    if frac <= 1.0:
        return mid[0] + frac * (ex - mid[0]), mid[1] + frac * (ey - mid[1])
    s = 1.0 + (frac - 1.0) * (90.0 / 72.0 - 1.0) / 0.25
    return ex * s, ey * s


ROOT = (
    ["Fp1", "Fp2"]
    + ["AF7", "AF5", "AF3", "AF1", "AFz", "AF2", "AF4", "AF6", "AF8"]
    + ["AFF5h", "AFF1h", "AFF2h", "AFF6h"]
    + ["F9", "F7", "F5", "F3", "F1", "Fz", "F2", "F4", "F6", "F8", "F10"]
    + ["FFT7h", "FFC5h", "FFC3h", "FFC1h", "FFC2h", "FFC4h", "FFC6h", "FFT8h"]
    + ["FT9", "FT7", "FC5", "FC3", "FC1", "FCz", "FC2", "FC4", "FC6", "FT8", "FT10"]
    + ["FTT7h", "FCC5h", "FCC3h", "FCC1h", "FCC2h", "FCC4h", "FCC6h", "FTT8h"]
    + ["T9", "T7", "C5", "C3", "C1", "Cz", "C2", "C4", "C6", "T8", "T10"]
    + ["TTP7h", "CCP5h", "CCP3h", "CCP1h", "CCP2h", "CCP4h", "CCP6h", "TTP8h"]
    + ["TP9", "TP7", "CP5", "CP3", "CP1", "CPz", "CP2", "CP4", "CP6", "TP8", "TP10"]
    + ["TPP7h", "CPP5h", "CPP3h", "CPP1h", "CPP2h", "CPP4h", "CPP6h", "TPP8h"]
    + ["P9", "P7", "P5", "P3", "P1", "Pz", "P2", "P4", "P6", "P8", "P10"]
    + ["PPO5h", "PPO1h", "PPO2h", "PPO6h"]
    + ["PO9", "PO7", "PO5", "PO3", "PO1", "POz", "PO2", "PO4", "PO6", "PO8", "PO10"]
    + ["POO9h", "POO1", "POO2", "POO10h"]
    + ["O9", "O1", "Oz", "O2", "O10", "OI1h", "OI2h"]
)

STD64 = [
    "Fp1", "Fp2", "AF7", "AF3", "AFz", "AF4", "AF8", "F7", "F5", "F3", "F1", "Fz", "F2", "F4", "F6", "F8",
    "FT9", "FT7", "FC5", "FC3", "FC1", "FC2", "FC4", "FC6", "FT8", "FT10", "T7", "C5", "C3", "C1", "Cz",
    "C2", "C4", "C6", "T8", "TP9", "TP7", "CP5", "CP3", "CP1", "CPz", "CP2", "CP4", "CP6", "TP8", "TP10",
    "P7", "P5", "P3", "P1", "Pz", "P2", "P4", "P6", "P8", "PO7", "PO3", "POz", "PO4", "PO8", "O1", "Oz",
    "O2", "FCz",
]
STD32 = [
    "Fp1", "Fz", "F3", "F7", "FT9", "FC5", "FC1", "C3", "T7", "TP9", "CP5", "CP1", "Pz", "P3", "P7", "O1",
    "Oz", "O2", "P4", "P8", "TP10", "CP6", "CP2", "Cz", "C4", "T8", "FT10", "FC6", "FC2", "F4", "F8", "Fp2",
]
STD24 = [
    "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "FC1", "FC2", "T7", "C3", "Cz", "C4", "T8", "CP1", "CP2",
    "P7", "P3", "Pz", "P4", "P8", "O1", "Oz", "O2",
]


def main():
    out_dir = sys.argv[1] if len(sys.argv) > 1 else os.path.join(os.path.dirname(__file__), "..", "fixtures", "montages")
    os.makedirs(out_dir, exist_ok=True)
    assert len(ROOT) == 128 and len(set(ROOT)) == 128, len(ROOT)
    root = []
    for label in ROOT:
        x, y = position(label)
        root.append({"label": label, "x": round(x / 100.0, 6), "y": round(y / 100.0, 6)})
    with open(os.path.join(out_dir, "std-128.json"), "w") as f:
        json.dump(root, f, indent=1)
        f.write("\n")
    order = {l: i for i, l in enumerate(ROOT)}
    for name, labels in (("std-64", STD64), ("std-32", STD32), ("std-24", STD24)):
        assert len(labels) == int(name[4:]) and len(set(labels)) == len(labels), name
        assert all(l in order for l in labels), name
        labels = sorted(labels, key=order.get)
        with open(os.path.join(out_dir, name + ".json"), "w") as f:
            json.dump({"name": name, "parent": "std-128", "labels": labels}, f, indent=1)
            f.write("\n")


if __name__ == "__main__":
    main()
