import sys

from mamifuse.cli import main

sys.exit(main())
