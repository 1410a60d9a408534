"""Shared pytest configuration.

Keeps the random-instance factories importable (`from factories import ...`)
by making sure the tests directory is on sys.path even when pytest is invoked
from odd working directories.
"""

import os
import sys

sys.path.insert(0, os.path.dirname(__file__))
