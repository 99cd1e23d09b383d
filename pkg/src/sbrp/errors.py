"""Exception hierarchy shared by all solver modules."""


class SBRPError(Exception):
    """Base class; ``kind`` is the machine-readable tag used by the CLI."""

    kind = "error"

    def to_dict(self):
        return {"kind": self.kind, "message": str(self)}


class InstanceFormatError(SBRPError):
    kind = "instance_format"

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)

    def to_dict(self):
        d = super().to_dict()
        d.update(line=self.line, field=self.field)
        return d


class ConfigError(SBRPError):
    kind = "config"


class StudentUnreachable(SBRPError):
    kind = "student_unreachable"

    def __init__(self, student_ids):
        self.student_ids = sorted(student_ids)
        super().__init__(f"students with no stop within the walk limit: {self.student_ids}")


class InvalidMeanRidership(SBRPError):
    kind = "invalid_mean_ridership"


class InfeasibleCalibration(SBRPError):
    kind = "infeasible_calibration"


class DomainError(SBRPError, ValueError):
    kind = "domain"


class VPlusTooSmall(SBRPError):
    kind = "v_plus_too_small"


class AllocationInfeasible(SBRPError):
    kind = "allocation_infeasible"

    def __init__(self, student_ids):
        self.student_ids = sorted(student_ids)
        super().__init__(f"stop capacity cannot accommodate students {self.student_ids}")


class StopUnroutable(SBRPError):
    kind = "stop_unroutable"

    def __init__(self, stop_id, reason=""):
        self.stop_id = stop_id
        super().__init__(f"stop {stop_id} is infeasible even on a dedicated bus{': ' + reason if reason else ''}")


class TooLarge(SBRPError):
    kind = "too_large"
