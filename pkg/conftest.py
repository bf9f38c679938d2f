"""Root conftest: adds the project root to sys.path so all modules are importable."""
import os
import sys

sys.path.insert(0, os.path.dirname(__file__))
