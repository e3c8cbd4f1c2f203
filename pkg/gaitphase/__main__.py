"""Entry point for gaitphase."""

import sys

from gaitphase.cli import main  # pragma: no cover

if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
