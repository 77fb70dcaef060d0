"""Exception hierarchy shared by all itb modules.

Every domain error derives from :class:`ItbError`; the CLI maps those to
exit code 1 and prints the class name so scripts can grep for it.
"""


class ItbError(Exception):
    """Base class for domain errors."""


# trace-core


class TraceError(ItbError):
    pass


class MalformedLine(TraceError):
    def __init__(self, line_no, reason=""):
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"line {line_no}: {reason}" if reason else f"line {line_no}")


class SchemaViolation(TraceError):
    def __init__(self, line_no, field, reason=""):
        self.line_no = line_no
        self.field = field
        self.reason = reason
        msg = f"line {line_no}: field {field!r}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)


class OrphanDescriptor(SchemaViolation):
    """fd used without a live open (strict mode only; repaired otherwise)."""

    def __init__(self, line_no, fd):
        self.fd = fd
        super().__init__(line_no, "fd", f"fd {fd} has no live open")


class NonMonotoneThread(TraceError):
    def __init__(self, tid, index):
        self.tid = tid
        self.index = index
        super().__init__(f"thread {tid}: event {index} starts before its predecessor ends")


class EmptyTrace(TraceError):
    pass


# synth-gen


class InvalidSpec(ItbError):
    def __init__(self, reason):
        self.reason = reason
        super().__init__(reason)


# replayer


class ReplayError(ItbError):
    pass


class InvalidPlan(ReplayError):
    pass


class InsufficientSpace(ReplayError):
    def __init__(self, needed, available):
        self.needed = needed
        self.available = available
        super().__init__(f"need {needed} bytes, {available} available")


class PermissionDenied(ReplayError):
    def __init__(self, path, reason="permission denied"):
        self.path = path
        super().__init__(f"{path}: {reason}")


class TargetIoError(ReplayError):
    def __init__(self, op_index, os_error):
        self.op_index = op_index
        self.os_error = os_error
        super().__init__(f"op {op_index}: {os_error}")


class ClockSkew(ReplayError):
    pass


# dist-sim


class PositionUnderflow(ItbError):
    pass


class DomainError(ItbError, ValueError):
    pass


# metrics-report


class EmptyLog(ItbError):
    pass


class MismatchedConfigs(ItbError):
    pass
