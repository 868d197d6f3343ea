import sys

from sfids.cli import main

sys.exit(main())
