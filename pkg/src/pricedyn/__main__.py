import sys

from pricedyn.cli import main

sys.exit(main())
