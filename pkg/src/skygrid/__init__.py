"""Gridded low-altitude airspace: corridors, link monitoring, tracking,
layered conflict escalation, rule checking, and closed-loop simulation."""

from .errors import (DimensionMismatch, Discontiguous, EmptyLog, EmptyPath,
                     InconsistentJudgments, InvalidIndex, InvalidScenario,
                     MisalignedTrajectories, NoFeasibleManeuver, NoModesConfigured,
                     NoRoute, NonConvergence, NonPSDCovariance,
                     NonPositiveInput, NotReciprocal, OutOfBounds,
                     RadiiNotAscending, RestrictedOverlap, SameAircraft,
                     SkyGridError, UnknownCorridor, Unplannable)
from .grid import (Box, CellIndex, CylinderZone, GridSpec, Point3, PolygonZone,
                   ZoneKind, ZoneSet, cell_center, cell_neighbors, cell_to_box,
                   is_restricted, make_grid, point_to_cell)
from .corridors import (Corridor, CorridorGraph, CorridorKind, HighSpeedRing,
                        Intersection, Transition, build_corridor, build_graph,
                        build_high_speed_ring, corridor_rank, corridor_tangent,
                        find_intersections, route)
from .envelopes import (AircraftClass, AircraftState, ClassLimits, ConflictClass,
                        CpaResult, Cuboid, DualEnvelope, Ellipsoid, Sphere,
                        DEFAULT_CLASS_LIMITS, bounding_radius, classify_conflict,
                        solve_cpa, time_to_breach, wrap_heading)
from .rules import (RuleConfig, RuleName, Violation, check_all,
                    check_direction, check_geofence,
                    check_intersection_priority, check_occupancy,
                    check_separation, check_speed)
from .links import (LinkMode, LinkModeName, Station, data_rate_bps,
                    default_link_modes, effective_range_km, fspl_dB,
                    link_metric_rows, measure, noise_power_dBm,
                    received_power_dBm, select_mode)
from .tracking import (Anomaly, AnomalyKind, AnomalyThresholds, BatchTracker,
                       KalmanParams, Track, cross_track_distance,
                       detect_anomalies, kalman_step, make_track)
from .avoidance import (AvoidanceConfig, AltitudeChange, Composite,
                        ConflictMatrix, ConflictRecord, ConflictState,
                        GlobalPlan, HeadingChange, Maneuver, ManeuverBounds,
                        Mission, SpeedChange, Tier4Weights, Trajectory,
                        apply_maneuver, clamp_maneuver, conflict_clusters,
                        conflict_matrix, deadlock_cycles,
                        estimate_collision_probability, predict_conflicts,
                        severity_of, tier1_maneuver, tier2_coordinate,
                        tier3_switch, tier4_plan, wait_for_graph)
from .evaluation import (AhpResult, ComparisonMatrix, IndicatorSet,
                         NormalizationBounds, ahp_weights, build_indicators,
                         composite_score, default_group_matrix,
                         default_leaf_matrices, evaluation_report)
from .scenario import (AircraftSpec, Scenario, Waypoint, load_scenario,
                       parse_scenario, scenario_hash)
from .eventlog import (EventLogWriter, iter_ticks, log_header, log_result,
                       read_event_log)
from .engine import TrialResult, World, run_trial, scan_log_for_overlaps
from .experiments import (SweepCell, make_encounter_scenario, sweep_envelope,
                          wilson_interval, write_link_metrics_csv,
                          write_sweep_csv)

__version__ = "0.1.0"
