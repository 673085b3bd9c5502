import sys

from sleepevents.main import main

sys.exit(main())
