"""sqsdplan is a Python package for sequential quantum state discrimination
planned as a finite-horizon POMDP with a static hidden hypothesis"""

from .__about__ import __version__  # noqa: F401
