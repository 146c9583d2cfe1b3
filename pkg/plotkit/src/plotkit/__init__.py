"""Figure rendering for dpoptlab metrics and diagnostics outputs."""

from .figures import (
    FigureSpec,
    RenderResult,
    render_cosine_heatmap,
    render_training_figure,
    spread_ids,
)
from .metrics_io import MetricsTable, SchemaError, load_metrics

__version__ = "0.1.0"
