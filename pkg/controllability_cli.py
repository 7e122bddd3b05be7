#!/usr/bin/env python3
"""Entry point for the steering toolkit: check, gramian, steer and sweep."""

import sys

from controllability.cli import main

if __name__ == '__main__':
    sys.exit(main())
