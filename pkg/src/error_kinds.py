# src/error_kinds.py
"""
Canonical error kind constants for watlab.

Every library failure is raised as a LabError carrying one of these kinds,
so the CLI can map it to an exit status and run records can store it.
"""

# Config
CONFIG_INVALID = "config_invalid"

# Input validation
NON_FINITE = "non_finite"
LABEL_OUT_OF_RANGE = "label_out_of_range"
DIMENSION_MISMATCH = "dimension_mismatch"
EMPTY_INPUT = "empty_input"
MISSING_CLASS = "missing_class"
SIMPLEX_VIOLATION = "simplex_violation"
OUT_OF_RANGE = "out_of_range"
UNBALANCED_CLASSES = "unbalanced_classes"
UNSUPPORTED_MODEL = "unsupported_model"

# Dataset files
CSV_MALFORMED = "csv_malformed"
CSV_NO_ROWS = "csv_no_rows"

# Training
TRAINING_ABORTED = "training_aborted"

# Run records
RECORD_MISSING = "record_missing"
RECORD_CORRUPT = "record_corrupt"
RECORD_VERSION = "record_unsupported_version"

# Kinds the CLI reports as input/config problems (exit 1); everything else is a runtime failure.
INPUT_KINDS = frozenset(
    {
        CONFIG_INVALID,
        CSV_MALFORMED,
        CSV_NO_ROWS,
        RECORD_MISSING,
        RECORD_CORRUPT,
        RECORD_VERSION,
    }
)


class LabError(ValueError):
    def __init__(self, kind, message):
        super().__init__(message)
        self.kind = kind

    def __str__(self):
        return f"{self.kind}: {self.args[0]}"
