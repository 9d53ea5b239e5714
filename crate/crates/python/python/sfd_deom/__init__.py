from ._sfd_deom import (
    PRESETS,
    SfdError,
    preset_config,
    run,
    validate_bath,
)

__all__ = ["PRESETS", "SfdError", "preset_config", "run", "validate_bath"]
