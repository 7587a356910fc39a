import sys

from serfocal.cli import main

sys.exit(main())
