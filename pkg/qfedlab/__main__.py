import sys
from qfedlab.cli import main

sys.exit(main())
