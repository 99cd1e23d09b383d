"""Chance-constrained school bus routing."""
from .core import (
    EMPTY_PLAN,
    Route,
    RoutePlan,
    StopDemand,
    TravelModel,
    TravelParams,
    build_travel_model,
    check_plan,
    default_fleet,
    location_key,
    make_route,
    plan_from_dict,
    route_duration,
    route_feasible,
)
from .milp import build_milp, export_milp
from .solver import RoutingOptions, solve_routing

__all__ = [
    "EMPTY_PLAN", "Route", "RoutePlan", "RoutingOptions", "StopDemand", "TravelModel", "TravelParams",
    "build_travel_model", "check_plan", "default_fleet", "location_key", "make_route", "plan_from_dict", "route_duration", "route_feasible",
    "solve_routing", "build_milp", "export_milp",
]
