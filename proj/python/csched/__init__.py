"""Packet scheduling on conflict graphs: environment, baselines and a recurrent MAPPO learner."""

import os as _os

_assets = _os.path.join(_os.path.dirname(__file__), "assets")
if "CSCHED_ASSET_DIR" not in _os.environ and _os.path.isdir(_assets):
    _os.environ["CSCHED_ASSET_DIR"] = _assets

from ._csched import *  # noqa: E402,F401,F403
from ._csched import __version__  # noqa: E402,F401
