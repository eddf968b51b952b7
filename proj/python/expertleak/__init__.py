from ._expertleak import *  # noqa: F401,F403
from ._expertleak import __doc__  # noqa: F401
