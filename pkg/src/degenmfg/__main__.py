import sys

from degenmfg.cli import main

sys.exit(main())
