import sys

from parlangevin.cli import main

sys.exit(main())
