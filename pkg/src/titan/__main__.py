import sys

from titan.cli import main

sys.exit(main())
