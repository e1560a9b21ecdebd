"""Statistical channel estimation for six-dimensional movable antenna base stations."""
from .channel import UserChannel, channel_tensor, ground_truth_power
from .estimator import EstimatorConfig, estimate_all, estimate_pose
from .experiment import ExperimentConfig, run_experiment, summarize
from .geometry import Pose, RotationAngles, SurfaceLayout, get_pattern
from .metrics import nmse, sum_rate_upper_bound
from .reconstructor import build_dictionary, estimate_user, fit_users, reconstruct_power
from .scenario import Scenario, ScenarioConfig, generate_scenario

__version__ = "0.1.0"
