"""Allow running the command line via ``python -m cli``."""

import sys

from .app import main


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
