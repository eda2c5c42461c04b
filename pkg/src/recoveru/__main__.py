"""Run the command line via ``python -m recoveru``."""

import sys

from .cli import main

sys.exit(main())
