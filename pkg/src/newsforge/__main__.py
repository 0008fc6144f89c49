import sys

from newsforge.cli import main

sys.exit(main())
