#!/usr/bin/env python3
"""Download the Students and Heart datasets from the UCI repository into data/.

    python scripts/fetch_data.py [--dest data]

Produces ``students.csv`` (the Portuguese-course file, ';'-delimited as
published) and ``heart.csv`` (the four processed hospital files stacked, with
a header and a ``hospital`` column).  Needs network access to
archive.ics.uci.edu.
"""

import argparse
import io
import sys
import urllib.request
import zipfile
from pathlib import Path

STUDENTS_ZIP = "https://archive.ics.uci.edu/static/public/320/student+performance.zip"
HEART_ZIP = "https://archive.ics.uci.edu/static/public/45/heart+disease.zip"
HEART_LEGACY = "https://archive.ics.uci.edu/ml/machine-learning-databases/heart-disease/processed.{}.data"

HEART_COLUMNS = [
    "age", "sex", "cp", "trestbps", "chol", "fbs", "restecg",
    "thalach", "exang", "oldpeak", "slope", "ca", "thal", "num",
]
HOSPITALS = {"cleveland": "CL", "hungarian": "HU", "switzerland": "CH", "va": "VA"}


def _get(url: str) -> bytes:
    with urllib.request.urlopen(url, timeout=60) as resp:
        return resp.read()


def find_member(blob: bytes, name: str) -> bytes:
    """Return file ``name`` from a zip archive, descending into nested zips."""
    with zipfile.ZipFile(io.BytesIO(blob)) as zf:
        for info in zf.infolist():
            if info.filename.rsplit("/", 1)[-1] == name:
                return zf.read(info)
        for info in zf.infolist():
            if info.filename.endswith(".zip"):
                try:
                    return find_member(zf.read(info), name)
                except KeyError:
                    continue
    raise KeyError(name)


def heart_rows(text: str, hospital: str) -> list[str]:
    """Processed-file lines -> CSV lines with the hospital code appended."""
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        cells = [c.strip() for c in line.split(",")]
        if len(cells) != len(HEART_COLUMNS):
            raise ValueError(f"{hospital}: expected {len(HEART_COLUMNS)} fields, got {len(cells)}: {line!r}")
        rows.append(",".join(cells + [hospital]))
    return rows


def build_heart_csv(files: dict[str, str]) -> str:
    lines = [",".join(HEART_COLUMNS + ["hospital"])]
    for key, code in HOSPITALS.items():
        lines.extend(heart_rows(files[key], code))
    return "\n".join(lines) + "\n"


def fetch_heart() -> str:
    files = {}
    try:
        blob = _get(HEART_ZIP)
        for key in HOSPITALS:
            files[key] = find_member(blob, f"processed.{key}.data").decode("latin-1")
    except Exception as exc:  # fall back to the legacy per-file URLs
        print(f"zip download failed ({exc}); trying per-file URLs", file=sys.stderr)
        for key in HOSPITALS:
            files[key] = _get(HEART_LEGACY.format(key)).decode("latin-1")
    return build_heart_csv(files)


def fetch_students() -> bytes:
    return find_member(_get(STUDENTS_ZIP), "student-por.csv")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--dest", default=str(Path(__file__).resolve().parent.parent / "data"))
    args = parser.parse_args(argv)
    dest = Path(args.dest)
    dest.mkdir(parents=True, exist_ok=True)
    (dest / "students.csv").write_bytes(fetch_students())
    (dest / "heart.csv").write_text(fetch_heart())
    print(f"wrote {dest / 'students.csv'} and {dest / 'heart.csv'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
