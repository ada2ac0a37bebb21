"""Independent tabular Q-learning agents, one per intersection.

The agent state is the flattened tuple (phase, min_green_flag, occupancy per
incoming lane, queue per incoming lane) with counts clamped to count_cap.
Values for unseen states are all-zero. In deployment an unseen state yields
no action at all; the signal watchdog then guarantees the phase still rotates.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field

FORMAT_VERSION = 1

StateKey = tuple  # (phase, min_green, d_0..d_k, q_0..q_k)


@dataclass
class AgentParams:
    alpha: float = 0.0071
    gamma: float = 0.97
    epsilon_start: float = 0.05
    epsilon_end: float = 0.005
    ## episodes the decay schedule spans; None means "the trainer fills in
    ## its episode count" so epsilon lands on epsilon_end at the very end
    decay_episodes: int | None = None
    ## nominal decision rounds per episode, used only to pace the decay
    ## within an episode; actual episode lengths vary with policy quality
    episode_rounds: int = 200
    count_cap: int = 20

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if self.epsilon_end > self.epsilon_start:
            raise ValueError("epsilon_end must not exceed epsilon_start")
        if self.decay_episodes is not None and self.decay_episodes < 1:
            raise ValueError("decay_episodes must be at least 1")
        if self.episode_rounds < 1:
            raise ValueError("episode_rounds must be at least 1")


class QTable:
    """State -> per-action value vector, plus visit counts for diagnostics."""

    def __init__(self, n_actions: int):
        if n_actions < 1:
            raise ValueError("need at least one action")
        self.n_actions = n_actions
        self.q: dict[StateKey, list[float]] = {}
        self.visits: dict[StateKey, int] = {}

    def values(self, s: StateKey) -> list[float]:
        row = self.q.get(s)
        if row is None:
            row = [0.0] * self.n_actions
            self.q[s] = row
        return row

    def __contains__(self, s: StateKey) -> bool:
        return s in self.q

    def __len__(self) -> int:
        return len(self.q)


def encode_state(
    phase: int,
    min_green: bool,
    readings,
    incoming_lanes: tuple[str, ...],
    count_cap: int,
) -> StateKey:
    """Flatten one observation into a table key.

    readings must line up one-to-one with incoming_lanes (the canonical
    observation order); a mismatch is a hard error, not a silent reorder.
    """
    if len(readings) != len(incoming_lanes):
        raise ValueError(
            f"expected {len(incoming_lanes)} readings, got {len(readings)}"
        )
    d = []
    q = []
    for reading, lane_id in zip(readings, incoming_lanes):
        if reading.lane_id != lane_id:
            raise ValueError(
                f"reading for lane {reading.lane_id} out of order, expected {lane_id}"
            )
        occ = reading.occupancy
        que = reading.queue
        d.append(occ if occ < count_cap else count_cap)
        q.append(que if que < count_cap else count_cap)
    return (phase, 1 if min_green else 0, *d, *q)


def q_update(
    table: QTable,
    s: StateKey,
    a: int,
    r: float,
    s_next: StateKey,
    alpha: float,
    gamma: float,
) -> float:
    """One temporal-difference backup; returns the new Q(s, a)."""
    if not math.isfinite(r):
        raise ValueError(f"non-finite reward {r!r}")
    if not 0 <= a < table.n_actions:
        raise ValueError(f"action {a} out of range 0..{table.n_actions - 1}")
    row = table.values(s)
    best_next = max(table.values(s_next))
    row[a] += alpha * (r + gamma * best_next - row[a])
    self_visits = table.visits
    self_visits[s] = self_visits.get(s, 0) + 1
    return row[a]


def greedy_action(values) -> int:
    best = 0
    best_v = values[0]
    for i in range(1, len(values)):
        if values[i] > best_v:
            best_v = values[i]
            best = i
    return best


def select_action(table: QTable, s: StateKey, epsilon: float, rng) -> int:
    """Epsilon-greedy; greedy ties resolve to the lowest action index."""
    if epsilon > 0.0 and rng.random() < epsilon:
        return rng.randrange(table.n_actions)
    row = table.q.get(s)
    if row is None:
        return 0
    return greedy_action(row)


def act_deployment(table: QTable, s: StateKey) -> int | None:
    """Greedy action for a known state; None (no action) for an unseen one."""
    row = table.q.get(s)
    if row is None:
        return None
    return greedy_action(row)


def epsilon_schedule(episode: int, step: int, params: AgentParams) -> float:
    """Exploration rate after `step` decision rounds of episode `episode`.

    Epsilon decays exponentially per decision round, but each episode owns an
    equal slice of the decay budget: rounds interpolate within the episode's
    slice and clamp at its end.  Episode lengths vary a lot with policy
    quality, so pacing the decay by raw round count alone would exhaust the
    schedule early in a slow run and never reach the floor in a fast one.
    Here epsilon reaches epsilon_end exactly at the end of the last episode
    either way.

    Args:
        episode: zero-based episode index.
        step: zero-based decision round within the episode.
        params: hyperparameters; decay_episodes must be set.

    Returns:
        Epsilon in [epsilon_end, epsilon_start].
    """
    if params.decay_episodes is None:
        raise ValueError("decay_episodes is unset; the trainer sizes it from "
                         "the episode count before scheduling")
    within = min(max(step, 0), params.episode_rounds) / params.episode_rounds
    progress = (episode + within) / params.decay_episodes
    if progress >= 1.0:
        return params.epsilon_end
    if progress <= 0.0:
        return params.epsilon_start
    ratio = params.epsilon_end / params.epsilon_start
    return params.epsilon_start * ratio ** progress


@dataclass
class TableSet:
    """All agents of one training run plus provenance needed to reuse them."""

    tables: dict[str, QTable]
    lane_orders: dict[str, tuple[str, ...]]
    reward: str
    network_hash: str
    params: AgentParams
    episodes_trained: int = 0
    extra: dict = field(default_factory=dict)


def _state_to_text(s: StateKey) -> str:
    return ",".join(str(int(x)) for x in s)


def _state_from_text(text: str) -> StateKey:
    return tuple(int(p) for p in text.split(","))


def tables_to_text(ts: TableSet) -> str:
    """Canonical serialization: sorted keys throughout, stable float repr."""
    agents = {}
    for iid in sorted(ts.tables):
        table = ts.tables[iid]
        agents[iid] = {
            "n_actions": table.n_actions,
            "incoming_lanes": list(ts.lane_orders[iid]),
            "states": {
                _state_to_text(s): {
                    "q": table.q[s],
                    "visits": table.visits.get(s, 0),
                }
                for s in sorted(table.q)
            },
        }
    doc = {
        "format_version": FORMAT_VERSION,
        "reward": ts.reward,
        "network_hash": ts.network_hash,
        "episodes_trained": ts.episodes_trained,
        "params": {
            "alpha": ts.params.alpha,
            "gamma": ts.params.gamma,
            "epsilon_start": ts.params.epsilon_start,
            "epsilon_end": ts.params.epsilon_end,
            "decay_episodes": ts.params.decay_episodes,
            "episode_rounds": ts.params.episode_rounds,
            "count_cap": ts.params.count_cap,
        },
        "extra": ts.extra,
        "agents": agents,
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ": "), indent=1) + "\n"


def tables_from_text(text: str) -> TableSet:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"q-table file is not valid JSON (truncated?): {exc}") from None
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported q-table format_version {version!r}")
    p = doc["params"]
    params = AgentParams(
        alpha=p["alpha"],
        gamma=p["gamma"],
        epsilon_start=p["epsilon_start"],
        epsilon_end=p["epsilon_end"],
        decay_episodes=p["decay_episodes"],
        episode_rounds=p["episode_rounds"],
        count_cap=p["count_cap"],
    )
    tables: dict[str, QTable] = {}
    lane_orders: dict[str, tuple[str, ...]] = {}
    for iid, spec in doc["agents"].items():
        table = QTable(spec["n_actions"])
        for key_text, entry in spec["states"].items():
            s = _state_from_text(key_text)
            row = [float(v) for v in entry["q"]]
            if len(row) != table.n_actions:
                raise ValueError(
                    f"{iid}: state {key_text} has {len(row)} values, "
                    f"expected {table.n_actions}"
                )
            table.q[s] = row
            table.visits[s] = int(entry.get("visits", 0))
        tables[iid] = table
        lane_orders[iid] = tuple(spec["incoming_lanes"])
    return TableSet(
        tables=tables,
        lane_orders=lane_orders,
        reward=doc["reward"],
        network_hash=doc["network_hash"],
        params=params,
        episodes_trained=int(doc.get("episodes_trained", 0)),
        extra=doc.get("extra", {}),
    )


def save_tables(ts: TableSet, path: str) -> None:
    text = tables_to_text(ts)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_tables(path: str, expected_network_hash: str | None = None) -> TableSet:
    with open(path) as fh:
        ts = tables_from_text(fh.read())
    if expected_network_hash is not None and ts.network_hash != expected_network_hash:
        raise ValueError(
            "q-table network hash mismatch: trained on "
            f"{ts.network_hash[:12]}..., scenario is {expected_network_hash[:12]}..."
        )
    return ts
