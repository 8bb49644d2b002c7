#!/usr/bin/env python3
"""
Tackle Augmentation Study - Main Entry Point

Usage:
    python3 main.py design --out design/
    python3 main.py synth --count 400 --out data/
    python3 main.py experiment --config configs/desk.json

Run `python3 main.py --help` for every subcommand.
"""

import sys
from pathlib import Path


def setup_path() -> None:
    """Add the project root and src directory to the Python path."""
    root = Path(__file__).parent
    for path in (root, root / "src"):
        if path.exists() and str(path) not in sys.path:
            sys.path.insert(0, str(path))


def main(argv=None) -> int:
    """Main entry point; returns the process exit code."""
    try:
        setup_path()
        from interfaces.cli_interface import run_cli
    except ImportError as e:
        print(f"❌ Failed to import required modules: {e}")
        print("💡 Make sure you're running from the project root directory")
        print("💡 Install dependencies with: pip install -r requirements.txt")
        return 1
    return run_cli(argv)


if __name__ == "__main__":
    sys.exit(main())
