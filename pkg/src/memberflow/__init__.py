"""Member-firm trading-behavior analytics over daily buy/sell inventory panels."""

from memberflow.errors import MemberFlowError

__version__ = "0.1.0"

__all__ = ["MemberFlowError", "__version__"]
