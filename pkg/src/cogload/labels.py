"""Workload classes. The only place class index <-> name is defined."""

import enum

from .errors import ValidationError


class Label(enum.IntEnum):
    Easy = 0
    Medium = 1
    Difficult = 2


LABELS = tuple(label.name for label in Label)
N_CLASSES = len(Label)


def parse_label(value):
    """Accept a Label, its integer index, or its name (case-insensitive)."""
    if isinstance(value, Label):
        return value
    if isinstance(value, str):
        for label in Label:
            if label.name.lower() == value.strip().lower():
                return label
        raise ValidationError(f"unknown label {value!r}")
    try:
        return Label(int(value))
    except (TypeError, ValueError):
        raise ValidationError(f"unknown label {value!r}") from None
