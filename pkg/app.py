"""Launcher for the mufen command-line tool: python app.py <command> [flags]"""

import sys

from mufen.cli import main

if __name__ == "__main__":
    sys.exit(main())
