# core/errors.py
from __future__ import annotations

# Códigos de salida del CLI: 0 éxito, 2 error de usuario/config, 3 falla numérica
EXIT_OK = 0
EXIT_USER = 2
EXIT_NUMERIC = 3


class CausalXError(Exception):
    exit_code: int = EXIT_USER


class ConfigurationError(CausalXError, ValueError):
    pass


class DataFormatError(CausalXError, ValueError):
    def __init__(self, path, message: str, offset: int | None = None):
        where = f" (byte offset {offset})" if offset is not None else ""
        super().__init__(f"{path}: {message}{where}")
        self.path = path
        self.offset = offset


class DatasetNotFoundError(CausalXError, FileNotFoundError):
    def __init__(self, path):
        super().__init__(f"dataset file not found: {path}")
        self.path = path

    def __str__(self) -> str:
        return self.args[0]


class ContractError(CausalXError, ValueError):
    pass


class CheckpointError(CausalXError):
    pass


class CapabilityError(CausalXError, TypeError):
    pass


class TrainingError(CausalXError, RuntimeError):
    exit_code = EXIT_NUMERIC


class ConsistencyError(CausalXError, AssertionError):
    exit_code = EXIT_NUMERIC
