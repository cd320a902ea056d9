"""
Database models for the dlcl-lab run registry
"""
from datetime import datetime
from sqlalchemy import Column, Integer, String, DateTime, Float, JSON, ForeignKey, Boolean
from sqlalchemy.orm import declarative_base, relationship

Base = declarative_base()


class Run(Base):
    """Run model - one command invocation and its configuration"""
    __tablename__ = 'runs'

    id = Column(Integer, primary_key=True)
    name = Column(String(255))
    command = Column(String(50), nullable=False, index=True)  # train, probe-grad, ablate, ...

    # Configuration echo
    config_hash = Column(String(64), index=True)  # hex of the architecture digest
    config = Column(JSON)
    placement = Column(String(10))  # pre, post
    aggregation = Column(String(20))
    encoder_depth = Column(Integer)
    seed = Column(Integer)

    # Outcome
    status = Column(String(20), default='running')  # running, completed, diverged, failed
    diverged = Column(Boolean, default=False)
    reason = Column(String(255))
    final_loss = Column(Float)
    final_token_acc = Column(Float)
    output_dir = Column(String(512))

    started_at = Column(DateTime, default=datetime.utcnow)
    finished_at = Column(DateTime)

    # Relationships
    steps = relationship("StepMetric", back_populates="run", cascade="all, delete-orphan")
    probes = relationship("GradientProbe", back_populates="run", cascade="all, delete-orphan")

    def __repr__(self):
        return f"<Run(id={self.id}, command={self.command}, status={self.status})>"


class StepMetric(Base):
    """StepMetric model - one optimizer update"""
    __tablename__ = 'step_metrics'

    id = Column(Integer, primary_key=True)
    run_id = Column(Integer, ForeignKey('runs.id'), nullable=False, index=True)
    step = Column(Integer, nullable=False)
    loss = Column(Float)
    token_acc = Column(Float)
    lr = Column(Float)
    grad_norm = Column(Float)

    run = relationship("Run", back_populates="steps")

    def __repr__(self):
        return f"<StepMetric(run_id={self.run_id}, step={self.step}, loss={self.loss})>"


class GradientProbe(Base):
    """GradientProbe model - gradient norm at one layer input (layer 0 is the embedding)"""
    __tablename__ = 'gradient_probes'

    id = Column(Integer, primary_key=True)
    run_id = Column(Integer, ForeignKey('runs.id'), nullable=False, index=True)
    layer = Column(Integer, nullable=False)
    grad_norm = Column(Float)

    run = relationship("Run", back_populates="probes")

    def __repr__(self):
        return f"<GradientProbe(run_id={self.run_id}, layer={self.layer}, grad_norm={self.grad_norm})>"
