from pyavrobust.harness.config import (
    FORMAT_VERSION,
    ExperimentConfig,
    ModelConfig,
    StudyConfig,
    config_hash,
    dump_config,
    from_dict,
    load_config,
    to_dict,
)
from pyavrobust.harness.report import (
    Report,
    Verdict,
    build_report,
    emit_plot_series,
    plot_series,
    write_report,
)
from pyavrobust.harness.studies import corruption_study, masked_copy_study

__all__ = [
    "FORMAT_VERSION",
    "ExperimentConfig",
    "ModelConfig",
    "Report",
    "StudyConfig",
    "Verdict",
    "build_report",
    "config_hash",
    "corruption_study",
    "dump_config",
    "emit_plot_series",
    "from_dict",
    "load_config",
    "masked_copy_study",
    "plot_series",
    "to_dict",
    "write_report",
]
