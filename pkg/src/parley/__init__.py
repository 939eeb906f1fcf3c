"""Turn-taking orchestration for group discussions with one proactive conversational agent."""

__version__ = "0.1.0"

from .model import ProtocolConfig, Turn, validate_config
from .modes import Mode, ModePolicy, policy_for

__all__ = ["ProtocolConfig", "Turn", "validate_config", "Mode", "ModePolicy", "policy_for", "__version__"]
