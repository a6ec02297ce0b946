"""Rebuild GroupLens-format ML100K files from the copy bundled in a RecBole wheel.

RecBole ships ``ml-100k.inter`` (u.data plus a header row) and ``ml-100k.item``
(genre names instead of flags).  This writes ``u.data`` and ``u.item`` in the
original layout so the regular parsers can read them.

    pip download recbole --no-deps -d /tmp/rb
    python scripts/ml100k_from_recbole.py /tmp/rb/recbole-*.whl data/ml-100k
"""

import sys
import zipfile
from pathlib import Path

GENRES = [
    "unknown", "Action", "Adventure", "Animation", "Children's", "Comedy",
    "Crime", "Documentary", "Drama", "Fantasy", "Film-Noir", "Horror",
    "Musical", "Mystery", "Romance", "Sci-Fi", "Thriller", "War", "Western",
]
PREFIX = "recbole/dataset_example/ml-100k/"


def main(wheel, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(wheel) as zf:
        inter = zf.read(PREFIX + "ml-100k.inter").decode("utf-8").splitlines()
        items = zf.read(PREFIX + "ml-100k.item").decode("utf-8").splitlines()

    with open(out / "u.data", "w", encoding="latin-1") as fh:
        for line in inter[1:]:
            fh.write(line + "\n")

    index = {g: k for k, g in enumerate(GENRES)}
    with open(out / "u.item", "w", encoding="latin-1") as fh:
        for line in items[1:]:
            item_id, title, year, genres = (line.split("\t") + [""] * 4)[:4]
            flags = ["0"] * len(GENRES)
            for g in genres.split():
                flags[index[g]] = "1"
            full_title = f"{title} ({year})" if year else title
            fh.write("|".join([item_id, full_title, "", "", ""] + flags) + "\n")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
