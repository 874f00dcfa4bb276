from causaltools.cbiv.datagen import (Dataset, generate_demand, generate_syn,
                                      read_csv, split, write_csv)
from causaltools.cbiv.harness import (ExperimentConfig, compare_estimators,
                                      emit_report, run_experiment,
                                      sample_size_sweep)
from causaltools.cbiv.toydgp import load_toy_dgp, verify_inverse_identity

__all__ = [
    'Dataset', 'ExperimentConfig', 'compare_estimators', 'emit_report',
    'generate_demand', 'generate_syn', 'load_toy_dgp', 'read_csv',
    'run_experiment', 'sample_size_sweep', 'split', 'verify_inverse_identity',
    'write_csv'
]


def register_plugin(registry):
    from causaltools.cbiv import commands
    registry.register_subcommand(commands.create_cbiv_command)


__version__ = "0.1.0"
