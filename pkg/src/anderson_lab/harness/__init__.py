from .config import ConfigError, ExperimentSpec, load_spec, parse_spec, spec_hash
from .experiments import run
from .record import RunRecord, export, from_json, to_csv, to_json

__all__ = ["ConfigError", "ExperimentSpec", "RunRecord", "export", "from_json", "load_spec", "parse_spec",
           "run", "spec_hash", "to_csv", "to_json"]
