"""rovercrew: a deterministic multi-agent rover autonomy simulator.

Library surface: world simulation and sensor synthesis, detection
localization and Kalman tracking, segmentation-masked occupancy mapping
with map fusion, the two-pass fast-marching planner, panel inspection and
manipulation state machines, the E4 goal executive with emergency
escalation, and the scenario harness behind the `rovercrew` CLI.
"""

from .bus import BusConfig, MessageBus
from .codec import PalettisedMask, decode_mask, encode_mask
from .errors import SimError
from .executive import (AstronautConfig, AstronautPolicy, ControlAgent,
                        EscalationPhase, EscalationState, ExecConfig,
                        Executive, Plan, PlanStep, StepKind, WorldKnowledge,
                        boustrophedon, decompose, escalate)
from .geometry import SE2, CameraIntrinsics, CameraPose
from .messages import (AutonomyLevel, GoalKind, GoalMsg, ObsKind,
                       ObservationMsg)
from .metrics import MissionReport, load_trace, metrics
from .navmap import (OccupancyGrid, SegClass, digest_to_grid, fuse_maps,
                     grid_to_digest, integrate_depth, load_grid, mask_depth,
                     render_grid, save_grid)
from .perception import (EmergencyConfig, EmergencyMonitor, EventKind,
                         LocateConfig, LocatedDetection, PerceptionEvent,
                         Track, Tracker, TrackerConfig, TrackStatus, locate,
                         tracker_step)
from .planner import (ArrivalField, FollowerConfig, Path, PlannerConfig,
                      VelocityMap, arrival_field, distance_field, extract_path,
                      fast_march, follow, plan, velocity_map)
from .scenario import Scenario, load_scenario, validate_scenario
from .simulation import SimResult, Simulation, run_scenario, save_outputs
from .tasks import (PanelRecord, RackSpec, SampleOp, SamplePhase, Tool,
                    ToolPhase, ToolState, Verdict, classify_panel,
                    collect_sample, inspect_rack, toolchange, toolchange_step)
from .world import (CameraConfig, Entity, EntityKind, Fault, NoiseModel,
                    RawDetection, SensorFrame, Terrain, World,
                    ground_truth_visible, render_frame, step_physics)

__version__ = "0.1.0"
