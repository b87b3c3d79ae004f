import sys

from wolf.cli import main

sys.exit(main())
