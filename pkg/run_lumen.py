#!/usr/bin/env python3
"""
Launcher for the Lumen command line, with an install hint when packages are missing
"""

import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from setup_dev import missing_packages  # noqa: E402


def launch(argv=None):
    missing = missing_packages()
    if missing:
        print(f"❌ Missing packages: {', '.join(missing)}")
        print("Install them with: pip install -r requirements.txt")
        return 1

    from lumen_cli import main
    return main(argv)


if __name__ == "__main__":
    sys.exit(launch())
