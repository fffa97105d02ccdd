import sys

from qtwp.cli import main

sys.exit(main())
