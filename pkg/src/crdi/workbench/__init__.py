from .config import ExperimentConfig, parse_config_text
from .domains import DomainSpec, flatten, sample_shape, synth_domain
from .experiment import RunManifest, evaluate, run_experiment, sweep
from .tensor_io import read_tensor, write_grid, write_tensor
