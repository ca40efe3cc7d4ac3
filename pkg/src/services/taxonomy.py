"""Opposite vehicle-action pairs and the closed label vocabulary."""
import re
from typing import Dict, List

from ..errors import UnknownActionLabel
from ..schemas import ActionClass, Polarity

# pair_id -> (FIRST action, SECOND action)
PAIRS: Dict[str, tuple] = {
    "drive_reverse": ("Drive forward", "Reverse"),
    "enter_exit_vehicle": ("Enter vehicle", "Exit vehicle"),
    "load_unload_vehicle": ("Load vehicle", "Unload vehicle"),
    "open_close_trunk": ("Open trunk", "Close trunk"),
    "open_close_vehicle_door": ("Open vehicle door", "Close vehicle door"),
    "start_stop": ("Start", "Stop"),
    "turn_left_right": ("Turn left", "Turn right"),
}

# Always co-occurs with other vehicle motion, so it cannot form an isolated inter-pair class.
INTER_PAIR_EXCLUDED = "drive_reverse"

ACTIONS: Dict[str, ActionClass] = {}
for _pair_id, (_first, _second) in PAIRS.items():
    ACTIONS[_first] = ActionClass(name=_first, pair_id=_pair_id, polarity=Polarity.FIRST)
    ACTIONS[_second] = ActionClass(name=_second, pair_id=_pair_id, polarity=Polarity.SECOND)

# Published per-class sample counts of the intra-pair benchmark (2,300 total).
INTRA_PAIR_COUNTS: Dict[str, int] = {
    "Open vehicle door": 303, "Close vehicle door": 301,
    "Enter vehicle": 261, "Exit vehicle": 212,
    "Turn left": 252, "Turn right": 204,
    "Start": 167, "Stop": 215,
    "Drive forward": 83, "Reverse": 90,
    "Load vehicle": 54, "Unload vehicle": 61,
    "Open trunk": 49, "Close trunk": 48,
}

# MEVA / VIRAT activity names -> canonical action
_ALIASES: Dict[str, str] = {
    # MEVA
    "vehicle_drives_forward": "Drive forward",
    "vehicle_moving": "Drive forward",
    "vehicle_reverses": "Reverse",
    "person_enters_vehicle": "Enter vehicle",
    "person_exits_vehicle": "Exit vehicle",
    "person_loads_vehicle": "Load vehicle",
    "person_unloads_vehicle": "Unload vehicle",
    "person_opens_trunk": "Open trunk",
    "person_closes_trunk": "Close trunk",
    "person_opens_vehicle_door": "Open vehicle door",
    "person_closes_vehicle_door": "Close vehicle door",
    "vehicle_starts": "Start",
    "vehicle_stops": "Stop",
    "vehicle_turns_left": "Turn left",
    "vehicle_turns_right": "Turn right",
    # VIRAT
    "getting_into_vehicle": "Enter vehicle",
    "getting_out_of_vehicle": "Exit vehicle",
    "loading": "Load vehicle",
    "unloading": "Unload vehicle",
    "opening_trunk": "Open trunk",
    "closing_trunk": "Close trunk",
    "vehicle_turning_left": "Turn left",
    "vehicle_turning_right": "Turn right",
}

_CANONICAL = {name.lower(): name for name in ACTIONS}


def _norm(label: str) -> str:
    return re.sub(r"\s+", " ", label.strip()).lower()


def resolve_action(label: str) -> ActionClass:
    """Map a raw activity label onto the closed vocabulary."""
    key = _norm(label)
    name = _CANONICAL.get(key) or _ALIASES.get(key.replace(" ", "_"))
    if name is None:
        raise UnknownActionLabel(f"unknown action label: {label!r}")
    return ACTIONS[name]


def pair_actions(pair_id: str) -> List[ActionClass]:
    first, second = PAIRS[pair_id]
    return [ACTIONS[first], ACTIONS[second]]
