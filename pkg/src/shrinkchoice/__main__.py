import sys

from shrinkchoice.cli import main

sys.exit(main())
