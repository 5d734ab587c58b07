import sys

from ddam_sim.cli import main

sys.exit(main())
