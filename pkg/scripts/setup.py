#!/usr/bin/env python3
"""
Setup script for mufen: virtual environment, dependencies and a smoke check of the CLI
"""

import subprocess
import sys
from pathlib import Path

MIN_PYTHON = (3, 9)
VENV = Path(".venv")
BIN = VENV / ("Scripts" if sys.platform == "win32" else "bin")


def step(description, command):
    """Run one setup step, reporting its outcome; returns the completed process or None"""
    print(f"\n⏳ {description}")
    result = subprocess.run(command, capture_output=True, text=True)
    if result.returncode != 0:
        print(f"❌ {description} failed (exit {result.returncode})")
        print(f"   $ {' '.join(str(c) for c in command)}")
        print(result.stderr.strip() or result.stdout.strip())
        return None
    print(f"✅ {description}")
    return result


def check_layout():
    missing = [p for p in ("mufen", "requirements.txt", "app.py") if not Path(p).exists()]
    if missing:
        print(f"❌ Missing {', '.join(missing)}. Run this script from the project directory.")
    return not missing


def main():
    print("✋ mufen - Setup Script")
    print("=" * 50)

    if sys.version_info[:2] < MIN_PYTHON:
        print(f"❌ Python {'.'.join(map(str, MIN_PYTHON))}+ required, found {sys.version.split()[0]}")
        return False
    print(f"✅ Python {sys.version.split()[0]}")

    if not check_layout():
        return False

    if VENV.exists():
        print(f"✅ Reusing {VENV}/")
    elif not step("Creating virtual environment", [sys.executable, "-m", "venv", str(VENV)]):
        return False

    python = BIN / ("python.exe" if sys.platform == "win32" else "python")
    if not step("Installing requirements", [str(python), "-m", "pip", "install", "-r", "requirements.txt"]):
        return False
    version = step("Checking the CLI", [str(python), "app.py", "--version"])
    if not version:
        return False
    print(f"   {version.stdout.strip()}")

    activate = BIN / ("activate.bat" if sys.platform == "win32" else "activate")
    print("\n" + "=" * 50)
    print("🎉 mufen is ready")
    print(f"\n   source {activate}")
    print("   python app.py synth-hand --out out/hand.obj")
    print("   python app.py select-views --mesh out/hand.obj --out out/prior --plot")
    print("   python app.py train-toy --config configs/toy_train.json")
    print("   pytest -m 'not slow'")
    return True


if __name__ == "__main__":
    sys.exit(0 if main() else 1)
