from __future__ import annotations

import csv
import io
from pathlib import Path

import pytest

from apd.ingest import WebRow

GOLDEN_DIR = Path(__file__).parent / "golden"

# The two sample rows used across prompt and parsing tests.
SAMPLE_ROWS = [
    ("http://38.paulosimoes.net/", "We want to know how to best serve you. Please use one of the forms below..."),
    ("http://aberdeenreeckfl.com/", "Architectural Control Committee Policies and Forms..."),
]


def make_csv_source(rows, header=("url", "text")) -> io.StringIO:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(header)
    writer.writerows(rows)
    buf.seek(0)
    return buf


@pytest.fixture
def sample_rows() -> list[WebRow]:
    return [
        WebRow(id="a1", url=SAMPLE_ROWS[0][0], text=SAMPLE_ROWS[0][1]),
        WebRow(id="a2", url=SAMPLE_ROWS[1][0], text=SAMPLE_ROWS[1][1]),
    ]


def golden(name: str) -> str:
    return (GOLDEN_DIR / name).read_bytes().decode("utf-8")
