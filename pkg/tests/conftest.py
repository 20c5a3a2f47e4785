import sys
from pathlib import Path

# shared test helpers (gradcheck, trained-artifact cache) live next to the tests
sys.path.insert(0, str(Path(__file__).parent))
