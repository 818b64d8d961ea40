"""Entry point for python -m vulnscore."""

from .cli import main

if __name__ == "__main__":
    main()
