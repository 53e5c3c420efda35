#!/usr/bin/env python3
"""
CLI shim for the installed `refrec` command.

Delegates directly to the packaged main in refrec_app.
"""

import sys
from refrec_app.main import main


if __name__ == "__main__":
    sys.exit(main())
