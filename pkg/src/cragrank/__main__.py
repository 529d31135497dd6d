"""Module entry point: ``python -m cragrank``."""

from .cli import main

if __name__ == "__main__":
    raise SystemExit(main())
