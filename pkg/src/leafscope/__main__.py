import sys

from leafscope.cli import main

sys.exit(main())
