import sys

from pnpde.cli import main

sys.exit(main())
