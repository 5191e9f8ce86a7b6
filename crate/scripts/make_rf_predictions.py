"""Random-forest predictions on the penguins grid, in the prediction-file format.

Usage: python scripts/make_rf_predictions.py GRID_CSV OUT_CSV

GRID_CSV is the output of `mantour grid --data data/penguins.csv --standardize
--per-axis 12`; its coordinates are copied verbatim and only the class column
is replaced.
"""

import json
import sys

import numpy as np
import pandas as pd
from sklearn.ensemble import RandomForestClassifier

META = "# meta: "


def main(grid_path, out_path):
    with open(grid_path) as f:
        meta = json.loads(f.readline()[len(META):])
        header = f.readline().rstrip("\n")
        rows = [line.rstrip("\n").rsplit(",", 1)[0] for line in f]

    data = pd.read_csv("data/penguins.csv")
    names = meta["var_names"]
    x = data[names].to_numpy()
    x = (x - x.mean(axis=0)) / x.std(axis=0, ddof=1)
    model = RandomForestClassifier(n_estimators=500, random_state=1)
    model.fit(x, data["species"])

    grid = np.array([[float(v) for v in r.split(",")] for r in rows])
    predicted = model.predict(grid)
    meta["class_list"] = sorted(model.classes_.tolist())
    with open(out_path, "w") as out:
        out.write(META + json.dumps(meta, separators=(",", ":")) + "\n")
        out.write(header + "\n")
        for coords, label in zip(rows, predicted):
            out.write(f"{coords},{label}\n")


if __name__ == "__main__":
    main(*sys.argv[1:3])
