import os
import sys

_here = os.path.dirname(__file__)
sys.path.insert(0, os.path.join(_here, "src"))
# the detector package reads the feature files these tests emit
sys.path.insert(0, os.path.join(_here, os.pardir, "src"))
