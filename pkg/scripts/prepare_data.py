"""Materialize the benchmark CSVs under ``data/`` from locally installed wheels.

The original download locations are not reachable from the build sandbox, so
the public datasets are pulled from packages that bundle them:

* Abalone (UCI)                 -> ``scikit-lego`` (``sklego/data/abalone.zip``)
* Wisconsin diagnostic (UCI)    -> ``scikit-learn`` (``load_breast_cancer``)
* GBSG2 (686 patients)          -> ``lifelines`` (``datasets/gbsg2.csv``)

The ART simulation instances are not redistributed by any of these packages.
``art_predictors.csv`` is an ART-like design drawn from GBSG2 rows (the ART
design itself was modelled on a breast-cancer cohort): six continuous, one
ordered three-level, one unordered three-level and two binary predictors,
n = 250. Drop the real ART file in its place to use it instead.

Usage::

    pip install lifelines scikit-lego --no-deps
    python scripts/prepare_data.py
"""

import importlib.util
import io
import os
import zipfile

import numpy as np
import pandas as pd

OUT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "data")


def _package_dir(name):
    spec = importlib.util.find_spec(name)
    if spec is None or spec.origin is None:
        raise SystemExit(f"package {name!r} is not installed")
    return os.path.dirname(spec.origin)


def abalone():
    path = os.path.join(_package_dir("sklego"), "data", "abalone.zip")
    with zipfile.ZipFile(path) as outer:
        # the wheel ships a zip whose single member is the csv itself
        raw = outer.read(outer.namelist()[0])
    if raw[:2] == b"PK":
        with zipfile.ZipFile(io.BytesIO(raw)) as inner:
            raw = inner.read(inner.namelist()[0])
    df = pd.read_csv(io.BytesIO(raw))
    df = df.rename(columns={
        "sex": "Sex", "length": "Length", "diameter": "Diameter", "height": "Height",
        "whole_weight": "WholeWeight", "shucked_weight": "ShuckedWeight",
        "viscera_weight": "VisceraWeight", "shell_weight": "ShellWeight",
    })
    df["Age"] = df.pop("rings") + 1.5
    assert len(df) == 4177
    return df


def wisconsin():
    from sklearn.datasets import load_breast_cancer

    bc = load_breast_cancer()
    names = []
    for raw in bc.feature_names:
        stat, _, base = str(raw).partition(" ")
        if stat == "mean":
            names.append(base.replace(" ", "_") + "_mean")
        elif stat == "worst":
            names.append(base.replace(" ", "_") + "_worst")
        else:
            names.append(str(raw).replace(" error", "").replace(" ", "_") + "_se")
    df = pd.DataFrame(bc.data, columns=names)
    # sklearn codes benign = 1; the response here is malignant = 1
    df["malignant"] = 1 - bc.target
    assert int(df["malignant"].sum()) == 212
    return df


def gbsg():
    df = pd.read_csv(os.path.join(_package_dir("lifelines"), "datasets", "gbsg2.csv"))
    out = pd.DataFrame({
        "age": df["age"],
        "tsize": df["tsize"],
        "nodes": df["pnodes"],
        "pgr": df["progrec"],
        "er": df["estrec"],
        "meno": (df["menostat"] == "Post").astype(int),
        "hormon": (df["horTh"] == "yes").astype(int),
        "grade": df["tgrade"].map({"I": 1, "II": 2, "III": 3}),
        "time": df["time"],
        "status": df["cens"],
    })
    assert len(out) == 686 and int(out["status"].sum()) == 299
    return out


def art_like(gb, n=250, seed=2008):
    rng = np.random.default_rng(seed)
    rows = gb.iloc[np.sort(rng.choice(len(gb), size=n, replace=False))].reset_index(drop=True)
    z = (np.log1p(rows["er"]) - np.log1p(rows["er"]).mean()) / np.log1p(rows["er"]).std()
    a = (rows["age"] - rows["age"].mean()) / rows["age"].std()
    x10 = np.round(50 + 10 * (0.4 * a + 0.3 * z + np.sqrt(0.75) * rng.standard_normal(n)), 1)
    p9 = np.exp(np.outer(a, [0.0, 0.5, -0.5]))
    p9 /= p9.sum(axis=1, keepdims=True)
    x9 = np.array([rng.choice(3, p=p) + 1 for p in p9])
    return pd.DataFrame({
        "x1": rows["age"],
        "x2": rows["meno"],
        "x3": rows["tsize"],
        "x4": rows["grade"],
        "x5": rows["nodes"],
        "x6": rows["pgr"],
        "x7": rows["er"],
        "x8": rows["hormon"],
        "x9": x9,
        "x10": x10,
    })


def main():
    os.makedirs(OUT, exist_ok=True)
    gb = gbsg()
    frames = {
        "abalone.csv": abalone(),
        "wisconsin.csv": wisconsin(),
        "gbsg.csv": gb,
        "art_predictors.csv": art_like(gb),
    }
    for name, df in frames.items():
        path = os.path.join(OUT, name)
        df.to_csv(path, index=False, float_format=None)
        print(f"wrote {path} {df.shape}")


if __name__ == "__main__":
    main()
