"""Detection class vocabulary and the six-way class grouping."""

CLASS_NAMES = (
    "car",
    "truck",
    "construction_vehicle",
    "bus",
    "trailer",
    "barrier",
    "motorcycle",
    "bicycle",
    "pedestrian",
    "traffic_cone",
)

# Similar-shape classes share a head; car stays alone because it dominates the data.
DEFAULT_GROUPS = (
    ("car",),
    ("truck", "construction_vehicle"),
    ("bus", "trailer"),
    ("barrier",),
    ("motorcycle", "bicycle"),
    ("pedestrian", "traffic_cone"),
)

ATTRIBUTE_NAMES = (
    "vehicle.moving",
    "vehicle.parked",
    "vehicle.stopped",
    "cycle.with_rider",
    "cycle.without_rider",
    "pedestrian.moving",
    "pedestrian.standing",
    "pedestrian.sitting_lying_down",
)

CLASS_INDEX = {name: i for i, name in enumerate(CLASS_NAMES)}


def class_id(name: str) -> int:
    try:
        return CLASS_INDEX[name]
    except KeyError:
        raise ValueError(f"unknown detection class {name!r}") from None
