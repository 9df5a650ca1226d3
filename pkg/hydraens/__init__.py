import hydraens.data  # NOQA
import hydraens.fusion  # NOQA
import hydraens.io  # NOQA
import hydraens.numerics  # NOQA
import hydraens.pruning  # NOQA
import hydraens.theory  # NOQA
import hydraens.transformer  # NOQA
import hydraens.uq  # NOQA
from hydraens.version import __version__  # NOQA
