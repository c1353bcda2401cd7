#!/usr/bin/env python3
"""
CI Check Script - runs the checks of the GitHub Actions workflow locally
"""
import os
import subprocess
import sys


def run_command(cmd, description):
    """Run a command and report results."""
    print(f"\n{'='*60}")
    print(f"🔍 {description}")
    print(f"{'='*60}")
    print(f"Running: {' '.join(cmd)}")

    result = subprocess.run(cmd, capture_output=True, text=True)

    if result.returncode == 0:
        print(f"✅ {description} - PASSED")
        if result.stdout.strip():
            print("Output:")
            print(result.stdout[-4000:])
    else:
        print(f"❌ {description} - FAILED")
        if result.stderr.strip():
            print("Errors:")
            print(result.stderr[-4000:])
        if result.stdout.strip():
            print("Output:")
            print(result.stdout[-4000:])

    return result.returncode == 0


def main():
    """Run lint, import, CLI smoke and test checks."""
    print("🚀 dynlio CI Check Suite")

    if not os.environ.get("VIRTUAL_ENV"):
        print("⚠️  Warning: Not in a virtual environment")

    py = sys.executable
    fast = "--slow" not in sys.argv[1:]
    pytest_cmd = [py, "-m", "pytest", "tests/", "--tb=short", "-q"]
    if fast:
        pytest_cmd += ["-m", "not slow"]

    checks = [
        (["ruff", "check", "dynlio/"], "Ruff Linting"),
        (["ruff", "format", "--check", "dynlio/"], "Ruff Formatting"),
        (
            [py, "-c", "import dynlio; print(f'dynlio {dynlio.__version__} imports')"],
            "Package Import",
        ),
        ([py, "-m", "dynlio.pipeline.cli", "presets"], "CLI Presets"),
        ([py, "-m", "dynlio.pipeline.cli", "config", "--dump"], "CLI Default Config"),
        (pytest_cmd, "Test Suite" + (" (without slow runs)" if fast else "")),
    ]

    results = []

    for cmd, description in checks:
        success = run_command(cmd, description)
        results.append((description, success))

    print(f"\n{'='*60}")
    print("📊 CI CHECK SUMMARY")
    print(f"{'='*60}")

    passed = sum(1 for _, success in results if success)
    total = len(results)

    for description, success in results:
        status = "✅ PASS" if success else "❌ FAIL"
        print(f"{status:<10} {description}")

    print(f"\nOverall: {passed}/{total} checks passed")

    if passed == total:
        print("🎉 ALL CI CHECKS PASSED")
        return 0
    print("💥 SOME CI CHECKS FAILED")
    return 1


if __name__ == "__main__":
    sys.exit(main())
