# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.

"""
exceptions.py

Error categories raised throughout prompt_offset. Each category carries
the process exit code used by the `poet` command line tool.
"""


class PoetError(Exception):
    """Base class of all prompt_offset errors"""

    exit_code = 1


class ConfigurationError(PoetError, ValueError):
    """An invalid configuration value, naming the offending key"""

    exit_code = 2

    def __init__(self, key, constraint):
        self.key = key
        self.constraint = constraint
        super().__init__(f"{key}: {constraint}")


class ProtocolError(PoetError, ValueError):
    """Class overlap or insufficient classes/samples in a session protocol"""

    exit_code = 3


class SkeletonParseError(PoetError, ValueError):
    exit_code = 3

    def __init__(self, path, lineno, message):
        self.path = path
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")


class ContractError(PoetError, ValueError):
    """A shape, count or index violates an operation's precondition"""

    exit_code = 4


class NumericDegeneracyError(PoetError, ValueError):
    """Cosine similarity against a zero-norm vector"""

    exit_code = 4


class TrainingDivergedError(PoetError, RuntimeError):
    exit_code = 4

    def __init__(self, step, loss):
        self.step = step
        self.loss = loss
        super().__init__(f"non-finite loss {loss} at step {step}")


class CheckpointIntegrityError(PoetError):
    exit_code = 5

    def __init__(self, tensor, message):
        self.tensor = tensor
        super().__init__(f"tensor '{tensor}': {message}")


IO_EXIT_CODE = 5
