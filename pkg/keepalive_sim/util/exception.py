from pydantic import ValidationError


class SimulationError(Exception):
    """Base error for every failure the simulator reports to its callers.

    `detail` is the human readable message (same key the API responses use),
    `exit_code` is what the command line returns when the error escapes.
    """

    exit_code = 2
    status_code = 400

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class UsageError(SimulationError):
    exit_code = 1
    status_code = 422


class DataError(SimulationError):
    exit_code = 2
    status_code = 400


class PolicyError(SimulationError):
    exit_code = 2
    status_code = 400


class DivergenceError(SimulationError):
    exit_code = 3
    status_code = 500


def format_validation_error(e: ValidationError, row: int | None = None) -> str:
    """Flattens a pydantic ValidationError into `field: message` fragments

    Args:
        e (ValidationError): error raised while parsing a record
        row (int, optional): 1-based data row number, prepended when given

    Returns:
        str: single line message
    """
    messages = []

    for err in e.errors():
        field = ".".join(str(loc) for loc in err["loc"])
        messages.append(f"{field}: {err['msg']}")

    message = "; ".join(messages)

    if row is not None:
        return f"row {row}: {message}"

    return message
