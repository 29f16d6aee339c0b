import sys

from shelfmatch.cli import main

sys.exit(main())
