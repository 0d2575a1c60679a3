class QscraftError(RuntimeError):
    """A library error; `kind` is one of the CLI error kinds (e.g. "missing_artifact")."""

    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind
        self.message = message
