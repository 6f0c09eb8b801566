import os

__version__ = '0.1.0'

__all__ = [
    "autodiff",
    "backbone",
    "baseline",
    "cli",
    "config",
    "episodes",
    "general",
    "harness",
    "metrics",
    "optim",
    "protomaml",
    "protonet",
]

from . import autodiff
from . import backbone
from . import baseline
from . import cli
from . import config
from . import episodes
from . import general
from . import harness
from . import metrics
from . import optim
from . import protomaml
from . import protonet

_root = os.path.split(os.path.split(os.path.abspath(__file__))[0])[0]

scripts = os.path.join(
    os.path.sep.join(os.path.abspath(__file__).split(os.path.sep)[0:-2]),
    'scripts')
