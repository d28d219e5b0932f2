"""Error type carrying one of the documented failure codes."""


class ModwaveError(RuntimeError):
    """Raised with a short machine-readable code such as ``"newton-diverged"``."""

    def __init__(self, code: str, detail: str = ""):
        self.code = code
        self.detail = detail
        super().__init__(f"{code}: {detail}" if detail else code)
