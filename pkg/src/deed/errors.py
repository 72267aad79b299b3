"""Exception types shared across the pipeline.

Every error raised by this package derives from DeedError so callers (and
the CLI) can distinguish pipeline failures from programming mistakes.
"""


class DeedError(Exception):
    """Base class for all pipeline errors."""


class CorpusError(DeedError):
    """Invalid corpus file, record, split request, or training-pair file."""


class SandboxError(DeedError):
    """Sandbox setup failure (distinct from a candidate failing its tests)."""


class GatewayError(DeedError):
    """Backend unreachable, short response, or malformed payload."""


class MockScriptError(GatewayError):
    """Missing or underpopulated mock script entry."""


class TrainerError(DeedError):
    """Trainer subprocess failed or produced an invalid result manifest."""


class ConfigError(DeedError):
    """Invalid run configuration."""


class StateError(DeedError):
    """Persisted pipeline state missing, corrupt, or out of sync with config."""
