#!/usr/bin/env python3
"""Extract the MovieLens-100k ratings bundled in the pytorch-widedeep wheel and
write them as `user::item::rating::timestamp` lines (the MovieLens-1M layout).

Usage: python3 scripts/fetch_movielens_100k.py [out_path]
Default output: data/ml-100k/ratings.dat
"""
import io
import pathlib
import subprocess
import sys
import tempfile
import zipfile

import pandas as pd

MEMBER = "pytorch_widedeep/datasets/data/MovieLens100k_data.parquet.brotli"


def main() -> None:
    out = pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else "data/ml-100k/ratings.dat")
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "-q", "-d", tmp, "pytorch-widedeep==1.7.0"],
            check=True,
        )
        wheel = next(pathlib.Path(tmp).glob("*.whl"))
        with zipfile.ZipFile(wheel) as z:
            df = pd.read_parquet(io.BytesIO(z.read(MEMBER)))
    df = df.sort_values(["user_id", "timestamp", "movie_id"], kind="stable")
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w") as f:
        for u, i, r, t in df[["user_id", "movie_id", "rating", "timestamp"]].itertuples(index=False):
            f.write(f"{u}::{i}::{r}::{t}\n")
    print(f"wrote {len(df)} ratings to {out}")


if __name__ == "__main__":
    main()
