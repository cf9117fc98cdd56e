# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.

from .accuracy import (
    METRIC_COLUMNS,
    SessionReport,
    compute_accuracies,
    task_accuracies,
    harmonic_mean,
    confusion_matrix,
)
from .forgetting import AccuracyHistory, bwf
from .diagnostics import CollapseReport, collapse_diagnostics, order_matrix, write_grid_csv
