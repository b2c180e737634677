"""Exception types raised across the pipeline."""


class PipelineError(Exception):
    """Base class for all package errors."""


class AudioError(PipelineError):
    pass


class DegenerateAudio(AudioError):
    """Recording is all zeros, so it cannot be peak-normalized."""


class SilentAudio(AudioError):
    """No sample rises above the activity threshold."""


class UnreadableAudio(AudioError):
    pass


class TooShort(PipelineError):
    """Clip shorter than one analysis window."""


class NumericalBlowup(PipelineError):
    pass


class EmptyClass(PipelineError):
    """A class has no chunks to sample from."""


class IncompleteEnsemble(PipelineError):
    pass


class IncompleteFusion(PipelineError):
    pass


class CoverageMismatch(PipelineError):
    pass


class DegenerateLabels(PipelineError):
    """Evaluation labels contain only one class."""


class ManifestError(PipelineError):
    pass


class InsufficientData(PipelineError):
    pass


class TicketLimitExceeded(PipelineError):
    pass


class SubmissionRejected(PipelineError):
    """A score file failed validation; no ticket is consumed."""

    code = "rejected"


class MalformedCsv(SubmissionRejected):
    code = "malformed_csv"


class MissingFiles(SubmissionRejected):
    code = "missing_files"

    def __init__(self, missing):
        self.missing = sorted(missing)
        super().__init__(f"{len(self.missing)} file(s) missing: {', '.join(self.missing[:10])}")


class ExtraFiles(SubmissionRejected):
    code = "extra_files"

    def __init__(self, extra):
        self.extra = sorted(extra)
        super().__init__(f"{len(self.extra)} unexpected file(s): {', '.join(self.extra[:10])}")


class OutOfRangeScore(SubmissionRejected):
    code = "out_of_range_score"


class UnknownTeam(PipelineError):
    pass


class UnknownTrack(PipelineError):
    pass
