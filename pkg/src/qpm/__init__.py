from .params import ModelParams, ConfigError
from .spectra import SpectralField
