"""
Database connection, session management and the run registry facade
"""
import logging
from datetime import datetime
from typing import List, Optional

from sqlalchemy import create_engine
from sqlalchemy.engine import Engine
from sqlalchemy.exc import SQLAlchemyError
from sqlalchemy.orm import sessionmaker

from config import Config
from .models import Base, Run, StepMetric, GradientProbe

logger = logging.getLogger(__name__)


def make_engine(url: str) -> Engine:
    return create_engine(
        url,
        connect_args={"check_same_thread": False} if "sqlite" in url else {},
        echo=Config.DEBUG
    )


# Create database engine
engine = make_engine(Config.DATABASE_URL)

# Create session factory
SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)


def init_db(bind: Optional[Engine] = None):
    """Initialize database - create all tables"""
    Base.metadata.create_all(bind=bind or engine)
    logger.debug("Run registry initialized")


class RunRegistry:
    """
    Records runs, per-step metrics and gradient probes

    CSV files remain the artifacts of record; registry failures are logged, never raised.
    """

    def __init__(self, bind: Optional[Engine] = None, enabled: Optional[bool] = None):
        self.enabled = Config.RECORD_RUNS if enabled is None else enabled
        self.bind = bind or engine
        self.sessions = SessionLocal if bind is None else sessionmaker(autocommit=False, autoflush=False, bind=bind)
        if self.enabled:
            try:
                init_db(self.bind)
            except SQLAlchemyError as e:
                logger.warning(f"Run registry unavailable, recording disabled: {e}")
                self.enabled = False

    def start_run(self, command: str, run_config=None, name: Optional[str] = None, output_dir=None) -> Optional[int]:
        if not self.enabled:
            return None
        run = Run(name=name, command=command, output_dir=str(output_dir) if output_dir is not None else None)
        if run_config is not None:
            model = run_config.model
            run.config = run_config.to_dict()
            run.config_hash = model.config_hash().hex()
            run.placement = model.norm.value
            run.aggregation = model.aggregation.value
            run.encoder_depth = model.encoder_depth
            run.seed = run_config.train.seed
        try:
            with self.sessions() as db:
                db.add(run)
                db.commit()
                return run.id
        except SQLAlchemyError as e:
            logger.error(f"Failed to record {command} run: {e}")
            return None

    def record_step(self, run_id: Optional[int], metrics):
        if not self.enabled or run_id is None:
            return
        try:
            with self.sessions() as db:
                db.add(StepMetric(
                    run_id=run_id,
                    step=metrics.step,
                    loss=metrics.loss,
                    token_acc=metrics.token_acc,
                    lr=metrics.lr,
                    grad_norm=metrics.grad_norm,
                ))
                db.commit()
        except SQLAlchemyError as e:
            logger.error(f"Failed to record step {metrics.step} of run {run_id}: {e}")

    def record_probe(self, run_id: Optional[int], report):
        if not self.enabled or run_id is None:
            return
        try:
            with self.sessions() as db:
                db.add_all(GradientProbe(run_id=run_id, layer=layer, grad_norm=norm) for layer, norm in enumerate(report.norms))
                db.commit()
        except SQLAlchemyError as e:
            logger.error(f"Failed to record gradient probe of run {run_id}: {e}")

    def finish_run(
        self,
        run_id: Optional[int],
        status: str,
        final_loss: Optional[float] = None,
        final_token_acc: Optional[float] = None,
        reason: Optional[str] = None,
    ):
        if not self.enabled or run_id is None:
            return
        try:
            with self.sessions() as db:
                run = db.get(Run, run_id)
                if run is None:
                    logger.warning(f"Run {run_id} not found in registry")
                    return
                run.status = status
                run.diverged = status == 'diverged'
                run.reason = reason
                run.final_loss = final_loss
                run.final_token_acc = final_token_acc
                run.finished_at = datetime.utcnow()
                db.commit()
        except SQLAlchemyError as e:
            logger.error(f"Failed to finish run {run_id}: {e}")

    def recent_runs(self, limit: int = 20) -> List[Run]:
        if not self.enabled:
            return []
        with self.sessions(expire_on_commit=False) as db:
            return db.query(Run).order_by(Run.id.desc()).limit(limit).all()
