"""Interactive tactile identification of mating parts with a particle filter."""

from .action import ActionCandidateSet, action_likelihood, enumerate_actions, feasible_actions, random_action, select_action
from .bank import PegImageBank
from .filter import FilterConfig, Particle, ParticleSet, best_particle, class_posterior, init_particles, update
from .geometry import (
    IDENTITY,
    Action,
    MazeParams,
    Pose2D,
    PoseGrid,
    SensorWindow,
    ShapeSpec,
    generate_maze_board,
    glyph_library,
    hole_rasterize,
    make_pose_grid,
    rasterize,
)
from .harness import (
    EpisodeConfig,
    EpisodeResult,
    ExperimentReport,
    ablate_policies,
    pixel_baseline,
    run_episode,
    run_experiment,
    single_touch_baseline,
)
from .sensing import NOISELESS, NoiseModel, has_contact, l1_distance, observe_hole, observe_peg
from .similarity import EmbeddingModel, GeometricOracle, embed_score, info_nce_loss

__all__ = [
    "ablate_policies",
    "Action",
    "action_likelihood",
    "ActionCandidateSet",
    "best_particle",
    "class_posterior",
    "embed_score",
    "EmbeddingModel",
    "enumerate_actions",
    "EpisodeConfig",
    "EpisodeResult",
    "ExperimentReport",
    "feasible_actions",
    "FilterConfig",
    "generate_maze_board",
    "GeometricOracle",
    "glyph_library",
    "has_contact",
    "hole_rasterize",
    "IDENTITY",
    "info_nce_loss",
    "init_particles",
    "l1_distance",
    "make_pose_grid",
    "MazeParams",
    "NOISELESS",
    "NoiseModel",
    "observe_hole",
    "observe_peg",
    "Particle",
    "ParticleSet",
    "PegImageBank",
    "pixel_baseline",
    "Pose2D",
    "PoseGrid",
    "random_action",
    "rasterize",
    "run_episode",
    "run_experiment",
    "select_action",
    "SensorWindow",
    "ShapeSpec",
    "single_touch_baseline",
    "update",
]

__version__ = "0.1.0"
