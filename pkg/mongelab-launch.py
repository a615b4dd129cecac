#! /usr/bin/env python

"""Wrapper script, ensures that relative imports work correctly in a PyInstaller build"""

import sys

from mongelab.mongelab import main

if __name__ == '__main__':
    sys.exit(main())
