import sys

from dpgp.cli import main

sys.exit(main())
