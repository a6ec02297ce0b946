import os
from pathlib import Path

import numpy as np
import pytest

from nemf.dataset import ML100K_GENRES, RatingRecord, reindex

ROOT = Path(__file__).resolve().parents[1]
ML100K = Path(os.environ.get("NEMF_ML100K", ROOT / "data" / "ml-100k"))

# acceptance lines gathered during the run, echoed in the terminal summary
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)


def random_records(n_users=30, n_items=40, density=0.3, seed=0, ids=True):
    rng = np.random.default_rng(seed)
    out = []
    for u in range(n_users):
        k = max(4, int(rng.binomial(n_items, density)))
        for i in rng.choice(n_items, size=min(k, n_items), replace=False):
            uid = 10 * u + 3 if ids else u
            iid = 7 * int(i) + 1 if ids else int(i)
            out.append(RatingRecord(uid, iid, int(rng.integers(1, 6)), 0))
    return out


def random_masks(n_items, n_genres=6, seed=0):
    rng = np.random.default_rng(seed)
    masks = np.zeros(n_items, dtype=np.int64)
    for i in range(n_items):
        for g in rng.choice(n_genres, size=int(rng.integers(1, 4)), replace=False):
            masks[i] |= 1 << int(g)
    return masks


@pytest.fixture
def small():
    """30 x 40 random matrix with genre masks."""
    m = reindex(random_records())
    return m, random_masks(m.n_items)


def write_ml100k(path, records, n_items=None, seed=0):
    """Write ``u.data`` and ``u.item`` in the MovieLens-100K layout."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    with open(path / "u.data", "w") as fh:
        for r in records:
            fh.write(f"{r.user_id}\t{r.item_id}\t{r.rating}\t{r.timestamp}\n")
    item_ids = sorted({r.item_id for r in records})
    rng = np.random.default_rng(seed)
    with open(path / "u.item", "w") as fh:
        for iid in item_ids:
            flags = ["0"] * len(ML100K_GENRES)
            for g in rng.choice(np.arange(1, len(ML100K_GENRES)), size=int(rng.integers(1, 3)), replace=False):
                flags[g] = "1"
            fh.write(f"{iid}|Movie {iid} (1995)|01-Jan-1995||http://x|" + "|".join(flags) + "\n")
    return path


@pytest.fixture
def ml_dir(tmp_path):
    return write_ml100k(tmp_path / "ml", random_records(25, 35, 0.4, seed=3))


@pytest.fixture(scope="session")
def ml100k_path():
    if not (ML100K / "u.data").exists():
        pytest.skip(f"MovieLens-100K not found at {ML100K}; run scripts/ml100k_from_recbole.py")
    return ML100K
