"""
Errors Module

Exception hierarchy shared by every stage. Each error carries the process
exit code the CLI reports and the name of the stage that raised it.
"""


class AgingCurveError(Exception):
    """Base error for the aging curve pipelines"""
    exit_code = 4
    default_stage = "pipeline"

    def __init__(self, message, stage=None):
        super().__init__(message)
        self.stage = stage or self.default_stage


class ConfigError(AgingCurveError, ValueError):
    """Bad parameters or unreadable configuration"""
    exit_code = 2
    default_stage = "config"


class IngestError(AgingCurveError):
    """Input files could not be turned into a career panel"""
    exit_code = 3
    default_stage = "ingest"


class NumericError(AgingCurveError, ValueError):
    """Pre-condition violations and numerical failures"""
    exit_code = 4
    default_stage = "numeric"
