"""Exception base shared by every analysis module."""


class MemberFlowError(Exception):
    """Base class; ``module`` names the originating stage for CLI reporting."""

    module = "core"

    def to_dict(self) -> dict:
        return {"module": self.module, "error": type(self).__name__, "detail": str(self)}
