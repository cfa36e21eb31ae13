"""One-step consistency-model copilots for 2D shared-autonomy control.

Pipeline: collect expert transitions -> train a multi-step teacher denoiser
-> distill it into a one-step student -> deploy the student as a realtime
copilot that corrects flawed pilot actions, with a closed-form oracle
providing ground truth for every learned piece.
"""

__version__ = "0.1.0"

from .schedule import ScheduleParams, karras_sigma, precond_cm_boundary, precond_edm
from .oracle import FiniteDataset, closed_form_denoiser, oracle_pf_ode_solve, oracle_score
from .persistence import TransitionDataset, read_checkpoint, read_dataset, write_checkpoint, write_dataset
from .teacher import TeacherConfig, TeacherModel, heun_step, teacher_denoise, teacher_sample, teacher_train
from .student import (AssistRequest, ForwardModel, StudentModel,
                      consistency_denoise, csa_assist, ddpm_assist,
                      distill_train, forward_train)

__all__ = [
    "ScheduleParams", "karras_sigma", "precond_edm", "precond_cm_boundary",
    "FiniteDataset", "closed_form_denoiser", "oracle_score", "oracle_pf_ode_solve",
    "TransitionDataset", "read_dataset", "write_dataset", "read_checkpoint",
    "write_checkpoint",
    "TeacherConfig", "TeacherModel", "teacher_train", "teacher_denoise",
    "teacher_sample", "heun_step",
    "StudentModel", "ForwardModel", "AssistRequest", "consistency_denoise",
    "csa_assist", "ddpm_assist", "distill_train", "forward_train",
]
