#! /usr/bin/env python


"""mongelab.__main__: executed when mongelab directory is called as script."""

import sys

from .mongelab import main
sys.exit(main())
