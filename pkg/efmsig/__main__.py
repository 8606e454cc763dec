import sys

from efmsig.app import main

sys.exit(main())
