from .schemas import (
    AlphaMode, CaseDocument, GammaMode, ObjectiveMode, RunManifest, RunStatus, SolverStatus, StepRule,
    SweepParameter,
)
