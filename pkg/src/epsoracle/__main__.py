import sys

from epsoracle.cli import main

sys.exit(main())
