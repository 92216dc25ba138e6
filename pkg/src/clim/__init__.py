"""Dual-encoder joint slot filling and intent detection on a small numpy autodiff core."""

__version__ = "0.1.0"

from clim.data import Example, Vocabs, build_vocabs, load_split  # noqa: E402
from clim.estimator import ClimTagger  # noqa: E402
from clim.model import ClimConfig, ClimModel, forward  # noqa: E402
from clim.training import TrainConfig, evaluate, train  # noqa: E402

__all__ = ["ClimConfig", "ClimModel", "ClimTagger", "Example", "TrainConfig", "Vocabs", "build_vocabs",
           "evaluate", "forward", "load_split", "train", "__version__"]
