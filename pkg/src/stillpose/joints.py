"""Standard 24-joint layout: names, evaluation groups, limbs, part evidence."""

from __future__ import annotations

JOINT_NAMES = (
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee",
    "spine2", "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot",
    "neck", "left_collar", "right_collar", "head", "left_shoulder",
    "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist",
    "left_hand", "right_hand",
)

#: evaluation groups; together they partition the 24 joints
STANDARD_GROUPS = {
    "elbows": (18, 19),
    "wrists": (20, 21),
    "hands": (22, 23),
    "knees": (4, 5),
    "ankles": (7, 8),
    "toes": (10, 11),
    "neck/head": (12, 15),
    "torso": (0, 1, 2, 3, 6, 9, 13, 14, 16, 17),
}

TORSO_JOINTS = STANDARD_GROUPS["torso"]

#: limb chains for the torso-and-one-limb acceptance rule
LIMBS = {
    "left_arm": (16, 18, 20),
    "right_arm": (17, 19, 21),
    "left_leg": (1, 4, 7),
    "right_leg": (2, 5, 8),
}

NECK_JOINT = 12

#: default map from joints to the dense-correspondence part indices that count
#: as evidence of that joint (24-part convention: 1/2 torso, 3/4 right/left
#: hand, 5/6 left/right foot, 7-14 legs, 15-22 arms, 23/24 head)
STANDARD_JOINT_PART_SETS = {
    0: {1, 2},
    1: {1, 2, 8, 10},
    2: {1, 2, 7, 9},
    3: {1, 2},
    4: {8, 10, 12, 14},
    5: {7, 9, 11, 13},
    6: {1, 2},
    7: {5, 12, 14},
    8: {6, 11, 13},
    9: {1, 2},
    10: {5},
    11: {6},
    12: {1, 2, 23, 24},
    13: {1, 2, 15, 17},
    14: {1, 2, 16, 18},
    15: {23, 24},
    16: {15, 17},
    17: {16, 18},
    18: {15, 17, 19, 21},
    19: {16, 18, 20, 22},
    20: {4, 19, 21},
    21: {3, 20, 22},
    22: {4},
    23: {3},
}


def validate_groups(groups: dict, joint_count: int) -> None:
    """Groups must partition 0..joint_count-1."""
    seen: list[int] = []
    for members in groups.values():
        seen.extend(members)
    if sorted(seen) != list(range(joint_count)):
        raise ValueError("joint groups must partition the joint set")
