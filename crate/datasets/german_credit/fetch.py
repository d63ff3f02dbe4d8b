#!/usr/bin/env python3
"""Download the Statlog German Credit data and write it in codebook form.

Usage: python3 datasets/german_credit/fetch.py [--out DIR] [--source FILE]

Writes german_credit.csv and codebook.json into DIR (default: this
directory). --source converts an already downloaded german.data instead.
"""

import argparse
import csv
import json
import pathlib
import sys
import urllib.request

URL = "https://archive.ics.uci.edu/ml/machine-learning-databases/statlog/german/german.data"

CHECKING = {"A11": "below 0 DM", "A12": "0 to 200 DM", "A13": "200 DM or more", "A14": "no checking account"}
HISTORY = {
    "A30": "no credits taken or all paid back duly",
    "A31": "all credits at this bank paid back duly",
    "A32": "existing credits paid back duly till now",
    "A33": "delay in paying off in the past",
    "A34": "critical account or credits at other banks",
}
PURPOSE = {
    "A40": "new car",
    "A41": "used car",
    "A42": "furniture or equipment",
    "A43": "radio or television",
    "A44": "domestic appliances",
    "A45": "repairs",
    "A46": "education",
    "A48": "retraining",
    "A49": "business",
    "A410": "other",
}
SAVINGS = {
    "A61": "below 100 DM",
    "A62": "100 to 500 DM",
    "A63": "500 to 1000 DM",
    "A64": "1000 DM or more",
    "A65": "unknown or no savings account",
}
EMPLOYMENT = {
    "A71": "unemployed",
    "A72": "less than 1 year",
    "A73": "1 to 4 years",
    "A74": "4 to 7 years",
    "A75": "7 years or more",
}
SEX = {"A91": "male", "A92": "female", "A93": "male", "A94": "male", "A95": "female"}
DEBTORS = {"A101": "none", "A102": "co-applicant", "A103": "guarantor"}
PROPERTY = {
    "A121": "real estate",
    "A122": "savings agreement or life insurance",
    "A123": "car or other",
    "A124": "unknown or no property",
}
PLANS = {"A141": "bank", "A142": "stores", "A143": "none"}
HOUSING = {"A151": "rent", "A152": "own", "A153": "for free"}
JOB = {
    "A171": "unemployed or unskilled non-resident",
    "A172": "unskilled resident",
    "A173": "skilled employee or official",
    "A174": "management, self-employed or highly qualified",
}

# (column name, kind, mapping or None, description, unit)
COLUMNS = [
    ("checking_account", "categorical", CHECKING, "Status of the existing checking account", None),
    ("duration", "numeric", None, "Duration of the requested credit", "months"),
    ("credit_history", "categorical", HISTORY, "Credit history of the applicant", None),
    ("purpose", "categorical", PURPOSE, "Purpose of the credit", None),
    ("credit_amount", "numeric", None, "Requested credit amount", "DM"),
    ("savings", "categorical", SAVINGS, "Savings account or bonds", None),
    ("employment", "categorical", EMPLOYMENT, "Years at the present employment", None),
    ("installment_rate", "numeric", None, "Installment rate as a percentage of disposable income", "%"),
    ("sex", "binary", SEX, "Sex of the applicant", None),
    ("other_debtors", "categorical", DEBTORS, "Other debtors or guarantors", None),
    ("residence_since", "numeric", None, "Years at the present residence", "years"),
    ("property", "categorical", PROPERTY, "Most valuable property", None),
    ("age", "numeric", None, "Age of the applicant", "years"),
    ("other_installment_plans", "categorical", PLANS, "Other installment plans", None),
    ("housing", "categorical", HOUSING, "Housing situation", None),
    ("existing_credits", "numeric", None, "Number of existing credits at this bank", None),
    ("job", "categorical", JOB, "Job category", None),
    ("dependents", "numeric", None, "Number of people the applicant is liable to provide for", None),
    ("telephone", "binary", {"A191": "no", "A192": "yes"}, "Has a registered telephone", None),
    ("foreign_worker", "binary", {"A201": "yes", "A202": "no"}, "Is a foreign worker", None),
]


def codebook():
    features = []
    for name, kind, mapping, description, unit in COLUMNS:
        spec = {"name": name, "kind": kind, "description": description}
        if unit:
            spec["unit"] = unit
        if kind == "categorical":
            spec["categories"] = list(dict.fromkeys(mapping.values()))
        elif kind == "binary":
            spec["categories"] = sorted(set(mapping.values()), key=lambda v: v not in ("male", "no"))
        features.append(spec)
    return {
        "dataset_name": "german_credit",
        "features": features,
        "label_name": "good_credit",
        "positive_label_meaning": "good credit risk",
        "negative_label_meaning": "bad credit risk",
        "protected_attributes": [{"feature": "sex", "minority": "female", "majority": "male"}],
        "display_order": [c[0] for c in COLUMNS],
    }


def convert(lines, book):
    binary_labels = {f["name"]: f["categories"] for f in book["features"] if f["kind"] == "binary"}
    rows = []
    for i, line in enumerate(l for l in lines if l.strip()):
        cells = line.split()
        if len(cells) != 21:
            raise ValueError(f"line {i + 1}: expected 21 fields, found {len(cells)}")
        row = {"id": f"gc{i + 1:04d}"}
        for (name, kind, mapping, _, _), raw in zip(COLUMNS, cells):
            if kind == "numeric":
                row[name] = raw
            elif kind == "binary":
                row[name] = str(binary_labels[name].index(mapping[raw]))
            else:
                row[name] = mapping[raw]
        row["good_credit"] = "1" if cells[20] == "1" else "0"
        rows.append(row)
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=pathlib.Path, default=pathlib.Path(__file__).resolve().parent)
    parser.add_argument("--source", type=pathlib.Path)
    args = parser.parse_args()

    if args.source:
        text = args.source.read_text()
    else:
        try:
            with urllib.request.urlopen(URL, timeout=30) as resp:
                text = resp.read().decode("ascii")
        except OSError as e:
            sys.exit(f"download failed: {e}")

    book = codebook()
    rows = convert(text.splitlines(), book)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "codebook.json").write_text(json.dumps(book, indent=2) + "\n")
    header = ["id"] + [c[0] for c in COLUMNS] + ["good_credit"]
    with open(args.out / "german_credit.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=header)
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {len(rows)} rows to {args.out / 'german_credit.csv'}")


if __name__ == "__main__":
    main()
