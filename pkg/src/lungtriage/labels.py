"""Label vocabularies: triage classes, segmentation schemes, split roles."""

# Triage class order is fixed; argmax ties resolve to the earliest entry.
CLASS_LABELS = ("COVID", "Pneumonia", "Normal")

# Segmentation label schemes: id -> meaning.
SEG2_LABELS = {0: "background", 1: "lesion"}
SEG4_LABELS = {0: "background", 1: "left_lung", 2: "right_lung", 3: "lesion"}

SCHEME_CLASSIFICATION = "classification3"
SCHEME_SEG2 = "seg2"
SCHEME_SEG4 = "seg4"
SCHEMES = (SCHEME_CLASSIFICATION, SCHEME_SEG2, SCHEME_SEG4)

SEG_SCHEME_LABELS = {SCHEME_SEG2: SEG2_LABELS, SCHEME_SEG4: SEG4_LABELS}

LESION_ID = {SCHEME_SEG2: 1, SCHEME_SEG4: 3}

ROLE_TRAIN = "train"
ROLE_VALIDATION = "validation"
ROLE_INFERENCE = "inference"
SPLIT_ROLES = (ROLE_TRAIN, ROLE_VALIDATION, ROLE_INFERENCE)

# "test" is accepted as a synonym for the held-out role in manifests and
# transform calls.
ROLE_ALIASES = {"test": ROLE_INFERENCE}


def canonical_role(role: str) -> str:
    role = ROLE_ALIASES.get(role, role)
    if role not in SPLIT_ROLES:
        raise ValueError(f"unknown split role {role!r}; expected one of {SPLIT_ROLES}")
    return role


def scheme_num_labels(scheme: str) -> int:
    if scheme not in SEG_SCHEME_LABELS:
        raise ValueError(f"not a segmentation scheme: {scheme!r}")
    return len(SEG_SCHEME_LABELS[scheme])
