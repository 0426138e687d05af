from loguru import logger
from rich import box
from rich.table import Table

from dilatin.DataTypes import ExitCode


class ManualException(Exception):
    title = "Dilation Error"
    code = ExitCode.construction_error

    def __init__(self, reason: str, context: str = "", code: int = None, **details):
        super().__init__(reason)
        self.reason = reason
        self.details = details
        if code is not None:
            self.code = code

        detail_text = ", ".join(f"{key}={value}" for key, value in details.items())
        self.context = "; ".join(part for part in (context, detail_text) if part)

    def output(self):
        table_exception = Table(box=box.SQUARE, show_header=True, style="#ec8888")

        table_exception.add_column(self.title, overflow="fold")

        logger_message = []

        if self.reason:
            table_exception.add_row(self.reason)
            logger_message.append(self.reason)

        if self.context:
            table_exception.add_row("")
            table_exception.add_row(f"[red]Context:[/red] {self.context}")
            logger_message.append(f"Context: {self.context}")

        if logger_message:
            logger.critical("\n".join(logger_message))

        return table_exception


class NotHermitian(ManualException):
    title = "Matrix Is Not Hermitian"


class NoConvergence(ManualException):
    title = "Iteration Did Not Converge"


class NotPSD(ManualException):
    title = "Matrix Is Not Positive Semidefinite"


class NotIsometric(ManualException):
    title = "Map Is Not Isometric"


class IndexOutOfRange(ManualException):
    title = "Index Out Of Range"


class DimensionMismatch(ManualException):
    title = "Dimension Mismatch"


class PreconditionViolated(ManualException):
    title = "Precondition Violated"


class DefectIdentityViolated(ManualException):
    title = "Defect Identity Violated"


class IllConditioned(ManualException):
    title = "Ill-Conditioned Solve"


class LiftFailed(ManualException):
    title = "Intertwining Lift Failed"


class NotProjection(ManualException):
    title = "Matrix Is Not A Projection"


class NotUnitary(ManualException):
    title = "Matrix Is Not Unitary"


class ClassViolation(ManualException):
    title = "Tuple Outside Positivity Class"


class IsometryDefect(ManualException):
    title = "Dilation Map Is Not Isometric"


class SlowConvergence(ManualException):
    title = "Slow Convergence"


class HypothesisViolated(ManualException):
    title = "Lifting Hypothesis Violated"


class RejectionBudgetExceeded(ManualException):
    title = "Rejection Budget Exceeded"


class ParseError(ManualException):
    title = "Input Parse Error"


class VerificationFailed(ManualException):
    title = "Verification Failed"
    code = ExitCode.verification_failed
