"""Run the acceptance suite and print one PASS/FAIL line per criterion.

Usage: python3 scripts/run_acceptance.py [--fast]

--fast skips the long-running criteria (6 to 9).
"""
import argparse
import subprocess
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--fast", action="store_true", help="skip the slow criteria")
    args = ap.parse_args()
    cmd = [sys.executable, "-m", "pytest", str(ROOT / "tests" / "test_acceptance.py"), "-q", "-s", "-rxX"]
    if args.fast:
        cmd += ["-m", "not slow"]
    res = subprocess.run(cmd, cwd=ROOT, capture_output=True, text=True, check=False)
    lines = [ln for ln in res.stdout.splitlines() if ln.startswith("CRITERION")]
    seen = {}
    for ln in lines:
        seen[int(ln.split()[1].rstrip(":"))] = ln
    for k in sorted(seen):
        print(seen[k])
    print(res.stdout.strip().splitlines()[-1] if res.stdout.strip() else res.stderr)
    return res.returncode


if __name__ == "__main__":
    sys.exit(main())
