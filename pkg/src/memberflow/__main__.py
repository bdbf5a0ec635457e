import sys

from memberflow.cli import main

sys.exit(main())
