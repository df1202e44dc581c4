import sys

from probtab.cli import main

sys.exit(main())
