"""Experiment harness: configs, drivers, the 1D oracle and report emission."""

from .config import ConfigError, RunConfig, config_from_dict, load_config
from .oracle import NotFound, oracle_1d
from .report import RunRecord, emit_report, load_record
from .experiments import (census, check_calculus, probe_generic, run_experiment,
                          sweep_epsilon)
