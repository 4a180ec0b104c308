"""python -m dentobox"""
import sys

from dentobox.cli import main

sys.exit(main())
