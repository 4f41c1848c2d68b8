"""Study orchestration: configuration, execution, persistence and reporting."""

from .config import STUDIES, ExperimentConfig, default_config, load_config
from .runner import RunManifest, load_manifest, report, run_study
from .studies import Check, StudyResult

__all__ = [
    "STUDIES",
    "Check",
    "ExperimentConfig",
    "RunManifest",
    "StudyResult",
    "default_config",
    "load_config",
    "load_manifest",
    "report",
    "run_study",
]
