"""Shared fixtures and the acceptance summary printer."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from hetero_mia.dataset import GaussianComponent, SyntheticSpec, TabularDataset, gen_synthetic

ROOT = Path(__file__).resolve().parent.parent
DATA = ROOT / "data"
CONFIGS = ROOT / "configs"
SCHEMAS = ROOT / "schemas"

# filled by tests/test_acceptance.py: criterion id -> (passed, detail)
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def gaussian_spec(parts, d=None, k=2) -> SyntheticSpec:
    """``parts``: iterable of (group, label, mean, cov, count) with scalar/vector/matrix cov."""
    comps = []
    for group, label, mean, cov, count in parts:
        mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        dim = d or len(mean)
        mean = np.broadcast_to(mean, (dim,)).copy()
        cov = np.asarray(cov, dtype=np.float64)
        if cov.ndim == 0:
            cov = float(cov) * np.eye(dim)
        elif cov.ndim == 1:
            cov = np.diag(cov)
        comps.append(GaussianComponent(str(group), int(label), mean, cov, int(count)))
    return SyntheticSpec(len(comps[0].mean), k, tuple(comps))


def blobs(parts, seed=0) -> TabularDataset:
    return gen_synthetic(gaussian_spec(parts), seed)


@pytest.fixture
def tiny_csv(tmp_path):
    """Three rows, the second missing its ``age`` value."""
    path = tmp_path / "tiny.csv"
    path.write_text("sex,age,score,site\nF,17,12,GP\nM,,8,MS\nM,19,15,MS\n")
    return path


@pytest.fixture
def tiny_schema():
    from hetero_mia.dataset import Schema

    return Schema.from_dict(
        {
            "name": "tiny",
            "group_column": "site",
            "label": {"column": "score", "rule": {"op": ">=", "value": 10}},
            "columns": [
                {"name": "sex", "kind": "categorical", "vocabulary": ["F", "M"]},
                {"name": "age", "kind": "numeric"},
            ],
        }
    )


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    digits = lambda c: int("".join(ch for ch in c if ch.isdigit()) or 10**6)  # noqa: E731 - info lines last
    for cid in sorted(ACCEPTANCE, key=lambda c: (digits(c), c)):
        ok, detail = ACCEPTANCE[cid]
        status = "INFO" if cid.startswith("info") else ("PASS" if ok else "FAIL")
        tr.write_line(f"{status}  {cid}: {detail}")
