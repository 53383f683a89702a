"""Turn the public RHC (SUPPORT) file into a proxsurv CSV plus fit config.

The raw file is the ``rhc.csv`` distributed on the Vanderbilt biostatistics
datasets page; it is not shipped here. Roles follow the data application:
exposure ``swang1`` (RHC vs no RHC), NCEs ``pafi1`` and ``paco21``, NCOs
``ph1`` and ``hema1``, every other baseline variable in X. Time runs from
admission to death, censored at last contact, in years.

Usage::

    python3 scripts/prepare_rhc.py rhc.csv --out-dir data/rhc
    proxsurv fit --config data/rhc/rhc_fit.yaml --output rhc_fit.json
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

NCE = ("pafi1", "paco21")
NCO = ("ph1", "hema1")
EXPOSURE = "swang1"
# identifiers, dates and outcome-derived columns are never covariates
NON_COVARIATES = {"ptid", "sadmdte", "dschdte", "dthdte", "lstctdte", "death", "t3d30", "dth30", "Unnamed: 0", ""}
DAYS_PER_YEAR = 365.25


def prepare(raw: pd.DataFrame) -> tuple[pd.DataFrame, dict, list[dict], list[str]]:
    """Return ``(analysis frame, schema, nco declarations, dropped columns)``.

    Categorical covariates are dummy coded with the first level dropped and
    missing values kept as their own level. Numeric covariates with missing
    values are dropped, since the estimators need complete data.
    """
    raw = raw.copy()
    died = raw["death"].astype(str).str.lower().isin(("yes", "1", "true"))
    end = np.where(died, raw["dthdte"], raw["lstctdte"])
    out = pd.DataFrame({
        "time": (end - raw["sadmdte"]).astype(float) / DAYS_PER_YEAR,
        "status": died.astype(int),
        "rhc": (raw[EXPOSURE].astype(str).str.upper() == "RHC").astype(float),
    })
    for col in (*NCE, *NCO):
        out[col] = raw[col].astype(float)
    dropped = []
    covariates = []
    for col in raw.columns:
        if col in NON_COVARIATES or col in NCE or col in NCO or col == EXPOSURE:
            continue
        values = raw[col]
        if pd.api.types.is_numeric_dtype(values):
            if values.isna().any():
                dropped.append(col)
                continue
            out[col] = values.astype(float)
            covariates.append(col)
        else:
            dummies = pd.get_dummies(values.fillna("missing").astype(str), prefix=col, drop_first=True,
                                     dtype=float)
            dummies = dummies.loc[:, dummies.std() > 0]
            dummies.columns = [_safe(c) for c in dummies.columns]
            out = pd.concat([out, dummies], axis=1)
            covariates.extend(dummies.columns)
    schema = {"time": "time", "status": "status", "exposure": ["rhc"], "covariates": covariates,
              "nce": list(NCE)}
    ncos = [{"name": w, "kind": "linear"} for w in NCO]
    return out, schema, ncos, dropped


def _safe(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch == "_" else "_" for ch in name)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("raw", type=Path, help="rhc.csv as downloaded")
    parser.add_argument("--out-dir", type=Path, default=Path("."))
    args = parser.parse_args(argv)
    frame, schema, ncos, dropped = prepare(pd.read_csv(args.raw))
    args.out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = args.out_dir / "rhc_analysis.csv"
    frame.to_csv(csv_path, index=False, float_format="%.17g")
    config = {"command": "fit", "input": csv_path.name, "schema": schema, "ncos": ncos}
    cfg_path = args.out_dir / "rhc_fit.yaml"
    cfg_path.write_text(yaml.safe_dump(config, sort_keys=False))
    if dropped:
        print(f"dropped incomplete numeric columns: {', '.join(dropped)}", file=sys.stderr)
    print(f"{len(frame)} subjects, {len(schema['covariates'])} covariate columns")
    print(f"wrote {csv_path} and {cfg_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
