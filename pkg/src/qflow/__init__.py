"""Quantum-circuit generative model for multi-port bike-share count dynamics."""
from .errors import (ConfigError, ContractError, DataError, DivergenceError, InvalidStateError,
                     LayoutError, ModelFormatError, NumericalError, ParseError, QFlowError)
from .qsim import AnsatzParams, CircuitLayout
from .encode import PanelData, SaxCodebook
from .model import TrainConfig, TrainedModel, prepare_training_data, train

__version__ = "0.1.0"
