"""
Exceptions raised by the batch engine.
"""


class PipelineError(Exception):
    """Base class for every engine failure reported to the CLI."""


class ConfigError(PipelineError):
    """Invalid or unknown configuration."""


class IngestError(PipelineError):
    """Transaction file missing, malformed, or mostly rejected."""


class SplitError(PipelineError):
    """Corpus cannot be split into feature and label periods."""


class ForecastError(PipelineError):
    """No ARIMA candidate could be fitted; callers fall back."""


class TrainingError(PipelineError):
    """PC model training failed (bad input or divergence)."""


class ModelFormatError(PipelineError):
    """Persisted model or normalization stats do not match this build."""


class StageOrderError(PipelineError):
    """A stage ran before the stage that produces its input."""

    def __init__(self, stage: str, missing_stage: str, path: object):
        self.stage = stage
        self.missing_stage = missing_stage
        super().__init__(
            f"`{stage}` needs the output of `{missing_stage}` ({path}); run `bia {missing_stage}` first"
        )


class EvaluationError(PipelineError):
    """Evaluation cannot run on the given corpus."""
