class EdiError(Exception):
    """Base class for every error raised by edikit."""

    code = "EDI_ERROR"

    def __init__(self, message: str = "", **detail):
        super().__init__(message or self.code)
        self.detail = detail
