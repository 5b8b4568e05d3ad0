#!/usr/bin/env python3
"""
MATE Pipeline Errors
====================

Exception hierarchy shared by every library module. Library code raises these;
only mate_cli.py turns them into exit codes.

Exit code mapping (see mate_cli.py):
- ConfigurationError, UsageError, CheckpointMismatchError -> 1
- everything else derived from MateError                 -> 2
"""


class MateError(Exception):
    """Base class for all pipeline errors"""


class ConfigurationError(MateError):
    """Invalid configuration key, value or combination (dimension mismatches included)"""


class UsageError(MateError):
    """API used outside its contract (non-scalar loss, stepping a finished episode, ...)"""


class NumericError(MateError):
    """NaN or Inf produced by a forward or backward computation"""


class DegenerateInputError(MateError):
    """Input for which a projection or recovery is undefined"""


class DomainError(MateError):
    """Argument outside the mathematical domain of an operation"""


class ImpossibleEvidenceError(MateError):
    """Transition with zero likelihood under every context"""


class DataError(MateError):
    """Malformed measurement or fixture data"""


class CheckpointMismatchError(MateError):
    """Checkpoint tensors incompatible with the model they are loaded into"""
