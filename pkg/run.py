#!/usr/bin/env python3
"""
MAP Market Lab - Main Entry Point

Launcher for the command line: python run.py optimize --config example_data/two_regime_priced.json
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

try:
    from app.cli import main
except ImportError as e:
    print("❌ Error: Missing dependencies!")
    print()
    print("Please install the required packages:")
    print("pip install -r requirements.txt")
    print()
    print(f"Technical details: {e}")
    sys.exit(1)

if __name__ == "__main__":
    sys.exit(main())
