"""Main entry point for the maeip command line."""

from src.maeip.cli import main

if __name__ == "__main__":
    main()
