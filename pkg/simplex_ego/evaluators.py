"""
External objective evaluators - run a simulator program once per curve
The curve goes to stdin as one CSV line; the program prints one real on stdout
"""
import logging
import math
import shlex
import subprocess
from pathlib import Path
from typing import List, Optional, Sequence, Union

from .curves import Curve
from .errors import ObjectiveError


class ExternalCommandObjective:
    """
    Objective backed by an external program

    Args:
        command: Program and arguments, as a list or a shell-style string
        timeout: Seconds allowed per evaluation
        cwd: Working directory for the program
    """

    def __init__(self, command: Union[str, Sequence[str]], timeout: float = 600.0,
                 cwd: Optional[Union[str, Path]] = None):
        self.command: List[str] = shlex.split(command) if isinstance(command, str) else list(command)
        if not self.command:
            raise ValueError("external objective needs a command")
        self.timeout = timeout
        self.cwd = None if cwd is None else str(cwd)
        self.logger = logging.getLogger(__name__)
        self.calls = 0

    def __call__(self, curve: Curve) -> float:
        line = ",".join(repr(float(v)) for v in curve.values) + "\n"
        self.calls += 1
        self.logger.debug(f"Running objective command: {' '.join(self.command)}")
        try:
            result = subprocess.run(self.command, input=line, capture_output=True, text=True,
                                    timeout=self.timeout, cwd=self.cwd)
        except FileNotFoundError:
            raise ObjectiveError(f"objective program not found: {self.command[0]}") from None
        except subprocess.TimeoutExpired:
            raise ObjectiveError(f"objective program timed out after {self.timeout:g}s") from None

        if result.returncode != 0:
            error_msg = result.stderr.strip() if result.stderr else "Unknown error"
            self.logger.error(f"Objective program failed (exit {result.returncode}): {error_msg}")
            raise ObjectiveError(f"objective program exited with {result.returncode}: {error_msg}")

        tokens = result.stdout.split()
        try:
            if len(tokens) != 1:
                raise ValueError(f"expected one value, got {len(tokens)} tokens")
            value = float(tokens[0])
        except ValueError as e:
            raise ObjectiveError(f"unparsable objective output {result.stdout.strip()[:80]!r}: {e}") from None
        if not math.isfinite(value):
            raise ObjectiveError(f"objective program printed {value}")
        return value
