#!/usr/bin/env python3
"""Regenerate the bundled probe scene under scenes/probe/.

The bundle is fully procedural and deterministic; this script exists so the
committed assets can be reproduced exactly.
"""

import sys
from pathlib import Path

from relightfield.sceneio import generate_probe_bundle


def main() -> int:
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else (
        Path(__file__).resolve().parent.parent / "scenes" / "probe"
    )
    toml = generate_probe_bundle(out)
    print(toml)
    return 0


if __name__ == "__main__":
    sys.exit(main())
