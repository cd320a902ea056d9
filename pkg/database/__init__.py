"""
Database package initialization
"""
from .models import Base, Run, StepMetric, GradientProbe
from .database import engine, SessionLocal, init_db, make_engine, RunRegistry

__all__ = [
    'Base',
    'Run',
    'StepMetric',
    'GradientProbe',
    'engine',
    'SessionLocal',
    'init_db',
    'make_engine',
    'RunRegistry'
]
