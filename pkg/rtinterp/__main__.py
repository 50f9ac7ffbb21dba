import sys

from rtinterp.cli import main

sys.exit(main())
