# errors.py
# Exception hierarchy for knnkge
# Every error also derives from the closest builtin so callers may catch either


class KGEError(Exception):
    """Root of all knnkge errors."""


class GraphParseError(KGEError, ValueError):
    def __init__(self, path, line_no, message):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{self.path}:{line_no}: {message}")


class DescriptionConflictError(KGEError, ValueError):
    pass


class EmptyGraphError(KGEError, ValueError):
    pass


class SplitError(KGEError, ValueError):
    pass


class InfeasibleSplitError(SplitError):
    pass


class VocabularyStateError(KGEError, RuntimeError):
    pass


class SequenceLengthError(KGEError, ValueError):
    pass


class TrainingDivergedError(KGEError, RuntimeError):
    def __init__(self, stage, epoch, last_finite_loss):
        self.stage = stage
        self.epoch = epoch
        self.last_finite_loss = last_finite_loss
        super().__init__(
            f"{stage} training diverged at epoch {epoch} "
            f"(last finite loss {last_finite_loss!r})"
        )


class FormatError(KGEError, ValueError):
    pass


class ConfigError(KGEError, ValueError):
    pass


class UnknownLabelError(KGEError, KeyError):
    def __str__(self):
        # KeyError quotes its argument; keep messages readable
        return str(self.args[0]) if self.args else ""
