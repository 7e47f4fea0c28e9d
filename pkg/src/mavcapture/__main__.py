import sys

from mavcapture.cli import main

sys.exit(main())
