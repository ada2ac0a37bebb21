"""Built-in benchmark scenarios.

The main benchmark is a 3x3 signalized grid with a dominant north-to-south
arterial along the middle column plus lighter cross-street and turning
demand. Rates are sized against the static plan (22 s green out of a 50 s
cycle, saturation flow 1800 veh/h): the most loaded approach runs at
700 veh/h (v/C 0.88, level of service E) in the medium scenarios and
1000 veh/h (v/C 1.26, oversaturated F) in the heavy ones.

The arterial runs north-south on purpose: every intersection lists its
north-south through movement as phase 0, so an untrained or unsure agent
that falls back to the first action is holding the main street green
rather than starving it. That mirrors how signal plans are set up in the
field, where the default phase serves the dominant movement.

Evaluation variants keep the same rates but shift the demand window, so an
evaluation never replays the exact training demand even at a matching seed;
they also allow a longer gridlock cap so slow controllers still drain.
"""

from __future__ import annotations

from .network import DemandFlow, RoadNetwork, ScenarioConfig, grid_generator

## benchmark grid geometry: short urban blocks, so a single block holds only
## a handful of queued vehicles. That keeps the lane counts an agent sees in
## a narrow range, which is what lets a tabular policy revisit its states
## often enough to learn at a conservative step size.
GRID_ROWS = 3
GRID_COLS = 3
EW_SPACING = 45.0     # m between adjacent intersections along a row
NS_SPACING = 60.0     # m along a column
SPEED_LIMIT = 13.89   # m/s (50 km/h)

## demand design rates, veh/h
ARTERIAL_RATE = 700.0        # most loaded approach, v/C 0.88 at the static plan
ARTERIAL_RATE_HEAVY = 1000.0  # v/C 1.26
REVERSE_RATE = 250.0
CROSS_WE_RATE = 200.0
CROSS_EW_RATE = 150.0
TURNING_RATE = 80.0

TRAIN_WINDOW = (0.0, 360.0)
EVAL_WINDOW = (50.0, 410.0)

## an episode normally runs until every vehicle finishes its route; the cap
## only cuts off gridlocked runs that would otherwise never terminate.
## Training uses a tighter cap because early policies gridlock routinely and
## the drain tail past it carries little signal per unit of wall time.
TRAIN_MAX_SIM_TIME = 1800.0
BENCHMARK_MAX_SIM_TIME = 3600.0


def benchmark_network(rows: int = GRID_ROWS, cols: int = GRID_COLS) -> RoadNetwork:
    return grid_generator(rows, cols, ew_spacing=EW_SPACING,
                          ns_spacing=NS_SPACING, speed_limit=SPEED_LIMIT)


def _grid_params(rows: int, cols: int) -> dict:
    return {
        "rows": rows,
        "cols": cols,
        "ew_spacing": EW_SPACING,
        "ns_spacing": NS_SPACING,
        "speed_limit": SPEED_LIMIT,
    }


def _benchmark_flows(window: tuple[float, float], arterial: float,
                     reverse: float, cross_we: float, cross_ew: float,
                     turning: float) -> list[DemandFlow]:
    start, end = window
    mid = GRID_COLS // 2
    flows = [
        DemandFlow(f"X_N_{mid}", f"X_S_{mid}", arterial, start, end),
        DemandFlow(f"X_S_{mid}", f"X_N_{mid}", reverse, start, end),
    ]
    for r in range(GRID_ROWS):
        flows.append(DemandFlow(f"X_W_{r}", f"X_E_{r}", cross_we, start, end))
        flows.append(DemandFlow(f"X_E_{r}", f"X_W_{r}", cross_ew, start, end))
    last = GRID_ROWS - 1
    flows.append(DemandFlow("X_W_0", f"X_S_{GRID_COLS - 1}", turning, start, end))
    flows.append(DemandFlow(f"X_E_{last}", "X_N_0", turning, start, end))
    return flows


def _benchmark_scenario(name: str, window: tuple[float, float],
                        arterial: float, horizon: float) -> ScenarioConfig:
    return ScenarioConfig(
        network=benchmark_network(),
        flows=_benchmark_flows(window, arterial, REVERSE_RATE,
                               CROSS_WE_RATE, CROSS_EW_RATE, TURNING_RATE),
        name=name,
        max_sim_time=horizon,
        grid_params=_grid_params(GRID_ROWS, GRID_COLS),
    )


def medium_train() -> ScenarioConfig:
    return _benchmark_scenario("medium-train", TRAIN_WINDOW, ARTERIAL_RATE,
                               TRAIN_MAX_SIM_TIME)


def medium_eval() -> ScenarioConfig:
    return _benchmark_scenario("medium-eval", EVAL_WINDOW, ARTERIAL_RATE,
                               BENCHMARK_MAX_SIM_TIME)


def heavy_train() -> ScenarioConfig:
    return _benchmark_scenario("heavy-train", TRAIN_WINDOW,
                               ARTERIAL_RATE_HEAVY, TRAIN_MAX_SIM_TIME)


def heavy_eval() -> ScenarioConfig:
    return _benchmark_scenario("heavy-eval", EVAL_WINDOW,
                               ARTERIAL_RATE_HEAVY, BENCHMARK_MAX_SIM_TIME)


def single_intersection(ew_rate: float = 500.0, ns_rate: float = 150.0,
                        window: tuple[float, float] = (0.0, 300.0),
                        name: str = "single") -> ScenarioConfig:
    """One signalized intersection with asymmetric demand; handy for fast
    training checks and controller unit behavior."""
    start, end = window
    return ScenarioConfig(
        network=grid_generator(1, 1, ew_spacing=EW_SPACING,
                               ns_spacing=NS_SPACING,
                               speed_limit=SPEED_LIMIT),
        flows=[
            DemandFlow("X_W_0", "X_E_0", ew_rate, start, end),
            DemandFlow("X_N_0", "X_S_0", ns_rate, start, end),
        ],
        name=name,
        max_sim_time=BENCHMARK_MAX_SIM_TIME,
        grid_params=_grid_params(1, 1),
    )


def spillback() -> ScenarioConfig:
    """Demand far beyond capacity on one approach so its queue outgrows the
    50 m detection zone: the observed queue saturates while the true network
    queue keeps growing."""
    return ScenarioConfig(
        network=grid_generator(1, 1, ew_spacing=EW_SPACING,
                               ns_spacing=NS_SPACING,
                               speed_limit=SPEED_LIMIT),
        flows=[
            DemandFlow("X_W_0", "X_E_0", 1500.0, 0.0, 600.0),
            DemandFlow("X_N_0", "X_S_0", 120.0, 0.0, 600.0),
        ],
        name="spillback",
        max_sim_time=900.0,
        grid_params=_grid_params(1, 1),
    )


BUILTIN_SCENARIOS = {
    "medium-train": medium_train,
    "medium-eval": medium_eval,
    "heavy-train": heavy_train,
    "heavy-eval": heavy_eval,
    "single": single_intersection,
    "spillback": spillback,
}


def builtin_scenario(name: str) -> ScenarioConfig:
    try:
        builder = BUILTIN_SCENARIOS[name]
    except KeyError:
        raise ValueError(
            f"unknown scenario {name!r}; built-ins: "
            f"{', '.join(sorted(BUILTIN_SCENARIOS))}"
        ) from None
    return builder()
