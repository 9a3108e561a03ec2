#!/usr/bin/env python3
"""
mufen demo: a synthetic hand, its prior bundle, then a short toy training run
"""

import json
import subprocess
import sys
from pathlib import Path

DEMO_DIR = Path("out/demo")
MESH = DEMO_DIR / "hand.obj"

DEMO = [
    ("Synthesizing a hand", ["synth-hand", "--seed", "7", "--curls", "0.1", "0.0", "0.3", "0.6", "0.9",
                             "--out", str(MESH), "--plot"]),
    ("Selecting views", ["select-views", "--mesh", str(MESH), "--out", str(DEMO_DIR / "prior"),
                         "--resolution", "256", "--plot"]),
    ("Training for 50 steps", ["train-toy", "--config", "configs/toy_train.json",
                               "--out", str(DEMO_DIR / "train"), "--steps", "50"]),
]


def mufen(description, args):
    """Run one CLI command and return its parsed JSON result, or None on failure"""
    print(f"\n▶ {description}")
    result = subprocess.run([sys.executable, "app.py", *args], capture_output=True, text=True)
    if result.returncode != 0:
        print(f"❌ exit {result.returncode}: {result.stdout.strip()}")
        return None
    return json.loads(result.stdout)


def main():
    print("✋ mufen - Demo")
    print("=" * 40)

    if not Path("app.py").exists():
        print("❌ app.py not found. Run this script from the project root.")
        return 1

    results = {}
    try:
        for description, args in DEMO:
            result = mufen(description, args)
            if result is None:
                return 1
            results[args[0]] = result
            print(f"✅ {json.dumps(result)}")
    except KeyboardInterrupt:
        print("\n👋 Demo interrupted")
        return 1

    print("\n" + "=" * 40)
    print(f"Selected pair: {results['select-views']['pair']}")
    print(f"Loss ratio after 50 steps: {results['train-toy']['ratio']:.3f}")
    print(f"👋 Renders and reports are in {DEMO_DIR}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
