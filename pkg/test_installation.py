#!/usr/bin/env python3
"""
Installation check for MAP Market Lab: Python version, dependencies, project files
and a tiny end-to-end solve. Run directly: python test_installation.py
"""

import sys
from pathlib import Path


def check_python_version():
    """Python 3.9 or newer"""
    print("🐍 Checking Python version...")
    version = sys.version_info
    if version >= (3, 9):
        print(f"✅ Python {version.major}.{version.minor}.{version.micro} - Compatible")
        return True
    print(f"❌ Python {version.major}.{version.minor}.{version.micro} - Requires Python 3.9+")
    return False


def check_core_imports():
    """Every runtime dependency imports"""
    print("\n📦 Checking core dependencies...")

    required_modules = [
        ("numpy", "NumPy"),
        ("scipy", "SciPy"),
        ("pandas", "Pandas"),
        ("rich", "Rich console"),
        ("dotenv", "python-dotenv"),
    ]

    all_good = True
    for module_name, display_name in required_modules:
        try:
            __import__(module_name)
            print(f"✅ {display_name}")
        except ImportError:
            print(f"❌ {display_name} - Not installed")
            all_good = False
    return all_good


def check_file_structure():
    """Package modules and example scenarios are in place"""
    print("\n📁 Checking file structure...")

    required_items = [
        ("app/core.py", "Command processing"),
        ("app/portfolio.py", "Portfolio solvers"),
        ("app/hedge.py", "Replication"),
        ("requirements.txt", "Requirements file"),
        ("example_data/", "Example scenarios"),
    ]

    all_good = True
    base_path = Path(__file__).parent
    for item_path, description in required_items:
        if (base_path / item_path).exists():
            print(f"✅ {description}")
        else:
            print(f"❌ {description} - Missing: {item_path}")
            all_good = False
    return all_good


def check_merton_solve():
    """Single-regime log investor: the solver must return (μ0 - r)/σ0²"""
    print("\n🎯 Checking a Merton solve...")
    try:
        from app.config import build_market
        from app.portfolio import FocProblem, solve_enlarged
        from app.wealth import UtilitySpec

        spec = build_market({"intensity": [[0.0]], "r": [0.03], "mu0": [0.08], "sigma0": [0.2]})
        solution = solve_enlarged(FocProblem(spec, 0, UtilitySpec.log()))
        if solution.converged and abs(solution.weights.pi0 - 1.25) < 1e-10:
            print(f"✅ Optimal stock weight {solution.weights.pi0:.6f}")
            return True
        print(f"❌ Unexpected solution: {solution}")
        return False
    except Exception as e:
        print(f"❌ Solve failed: {e}")
        return False


def main():
    """Run every check"""
    print("📈 MAP Market Lab - Installation Check")
    print("=" * 50)

    checks = [
        check_python_version,
        check_file_structure,
        check_core_imports,
        check_merton_solve,
    ]

    results = []
    for check in checks:
        try:
            results.append(check())
        except Exception as e:
            print(f"❌ Check failed with error: {e}")
            results.append(False)

    print("\n" + "=" * 50)
    passed, total = sum(results), len(results)
    if passed == total:
        print(f"✅ All checks passed ({passed}/{total})")
        print("\nNext steps:")
        print("1. python run.py optimize -c example_data/two_regime_priced.json")
        print("2. python run.py verify-emm -c example_data/two_regime_compliant.json --paths 2000")
        print("3. Check the output/ directory for reports")
        return 0

    print(f"❌ {total - passed} checks failed ({passed}/{total} passed)")
    if not results[2]:
        print("\nTo install missing dependencies:")
        print("pip install -r requirements.txt")
    return 1


if __name__ == "__main__":
    sys.exit(main())
