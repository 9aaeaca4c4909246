"""Fetch the classic MovieLens 100K ratings into data/ml-100k/u.data.

GroupLens downloads are not always reachable, so this pulls the copy that
ships inside the ``recbole`` wheel on PyPI and rewrites it as the original
tab-separated ``user item rating timestamp`` file.

    python scripts/fetch_movielens.py [--out data]
"""

import argparse
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

WHEEL = "recbole==1.2.1"
MEMBER = "recbole/dataset_example/ml-100k/ml-100k.inter"


def fetch(out_dir: Path) -> Path:
    target = out_dir / "ml-100k" / "u.data"
    if target.exists():
        return target
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", WHEEL, "--no-deps", "-q", "-d", tmp],
            check=True,
        )
        wheel = next(Path(tmp).glob("recbole-*.whl"))
        with zipfile.ZipFile(wheel) as zf:
            lines = zf.read(MEMBER).decode().splitlines()
    # first line is a typed header: user_id:token item_id:token rating:float timestamp:float
    rows = [line for line in lines[1:] if line.strip()]
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text("\n".join(rows) + "\n")
    return target


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=Path(__file__).resolve().parents[1] / "data")
    args = parser.parse_args()
    path = fetch(args.out)
    print(path)


if __name__ == "__main__":
    main()
