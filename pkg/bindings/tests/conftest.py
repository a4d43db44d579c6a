import sys
from pathlib import Path

# reuse the primary package's synthetic-corpus helpers
sys.path.insert(0, str(Path(__file__).resolve().parents[2] / "tests"))
