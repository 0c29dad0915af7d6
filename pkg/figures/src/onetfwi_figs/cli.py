"""onetfwi-figs: batch-render figures from a JSON spec file.

The spec file holds one figure spec object or a list of them; see
FigureSpec for the fields. Exit codes: 2 bad spec or schema mismatch,
3 missing file.
"""

import argparse
import json
import sys
from pathlib import Path

from .render import FigureSpec, render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="onetfwi-figs", description=__doc__)
    parser.add_argument("--spec", required=True, help="JSON figure spec(s)")
    args = parser.parse_args(argv)
    try:
        path = Path(args.spec)
        if not path.exists():
            raise FileNotFoundError(f"spec file not found: {path}")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ValueError(f"spec is not valid JSON: {exc}") from exc
        specs = doc if isinstance(doc, list) else [doc]
        for d in specs:
            if not isinstance(d, dict):
                raise ValueError("each figure spec must be a JSON object")
            print(f"wrote {render(FigureSpec.from_dict(d))}")
        return 0
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
