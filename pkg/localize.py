import sys
from pathlib import Path

# Rend le paquet importable sans installation
sys.path.append(str(Path(__file__).resolve().parent / "src"))

from localizer.cli import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
