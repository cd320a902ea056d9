"""
Gradient-flow diagnostics and weight exports
"""
from .gradients import (
    GradientReport,
    SweepRow,
    export_report_csv,
    export_sweep_csv,
    probe_gradient_norms,
    read_report_csv,
    summarize_sweep,
    sweep_gradient_norms,
)
from .factorization import (
    FactorizationCheck,
    FactorizationGuard,
    TinyStack,
    check_factorization,
    check_postnorm_factorization,
    check_prenorm_factorization,
)
from .weights import (
    HeatmapCell,
    NotAggregatedError,
    heatmap,
    mask_row,
    producer_view,
    stack_heatmaps,
    weight_tables,
    write_heatmap_csv,
)

__all__ = [
    'GradientReport',
    'SweepRow',
    'export_report_csv',
    'export_sweep_csv',
    'probe_gradient_norms',
    'read_report_csv',
    'summarize_sweep',
    'sweep_gradient_norms',
    'FactorizationCheck',
    'FactorizationGuard',
    'TinyStack',
    'check_factorization',
    'check_postnorm_factorization',
    'check_prenorm_factorization',
    'HeatmapCell',
    'NotAggregatedError',
    'heatmap',
    'mask_row',
    'producer_view',
    'stack_heatmaps',
    'weight_tables',
    'write_heatmap_csv',
]
