"""Bundled process model: a 27-activity paper-authoring process.

The process covers research, writing, internal review and a submission loop,
executed by 13 user roles. It is written as one table so every weight is
visible in one place. Structural properties the rest of the toolkit relies on:

- "Conduct Study" occurs in a case if and only if "Develop Hypothesis" occurred
  earlier, and "Evaluate" if and only if "Develop Method" did (long-term
  dependencies; "Experiment" sits on two nodes, one per branch, with different
  user groups).
- After "Research Related Work" the user steers control flow: "Main Author"
  continues with "Develop Hypothesis" with probability 0.60, "Student" always
  continues with "Develop Method".
- "Conduct Study" is only ever executed by "Student".
- "Submit" can naturally repeat (rebuttal rounds), so a repeated activity is
  not anomalous by itself.

Weights were tuned so a case has about 14 events on average and so that every
node with more than one outgoing edge is visited often, which keeps empirical
edge frequencies tight. Expected visits per walk are noted where they matter.
"""
from __future__ import annotations

from .process_generator import (
    ACTIVITY_NODE,
    END,
    START,
    VALUE_NODE,
    LikelihoodGraph,
    Node,
    ensure_valid,
)

USER = "user"

# node key -> (activity name, [(user, probability)...])
# node keys equal the activity name except for the duplicated "Experiment".
_NODES: dict[str, tuple[str, list[tuple[str, float]]]] = {
    "Identify Problem": ("Identify Problem", [("Main Author", 0.7), ("Supervisor", 0.3)]),
    "Research Related Work": (
        "Research Related Work",
        [("Main Author", 0.5), ("Author", 0.3), ("Student", 0.2)],
    ),
    "Develop Hypothesis": ("Develop Hypothesis", [("Main Author", 0.8), ("Author", 0.2)]),
    "Experiment#hypothesis": ("Experiment", [("Student", 0.6), ("Lab Assistant", 0.4)]),
    "Conduct Study": ("Conduct Study", [("Student", 1.0)]),
    "Develop Method": (
        "Develop Method",
        [("Student", 0.5), ("Author", 0.3), ("Main Author", 0.2)],
    ),
    "Experiment#method": (
        "Experiment",
        [("Lab Assistant", 0.5), ("Data Scientist", 0.3), ("Student", 0.2)],
    ),
    "Evaluate": ("Evaluate", [("Data Scientist", 0.6), ("Main Author", 0.4)]),
    "Analyze Results": ("Analyze Results", [("Data Scientist", 0.6), ("Main Author", 0.4)]),
    "Interpret Findings": ("Interpret Findings", [("Main Author", 0.6), ("Supervisor", 0.4)]),
    "Outline Paper": ("Outline Paper", [("Main Author", 1.0)]),
    "Write Introduction": ("Write Introduction", [("Main Author", 0.7), ("Author", 0.3)]),
    "Write Related Work": ("Write Related Work", [("Author", 0.55), ("Student", 0.45)]),
    "Write Method Section": ("Write Method Section", [("Author", 1.0)]),
    "Write Results Section": (
        "Write Results Section",
        [("Main Author", 0.6), ("Data Scientist", 0.4)],
    ),
    "Create Figures": ("Create Figures", [("Student", 0.5), ("Lab Assistant", 0.5)]),
    "Write Conclusion": ("Write Conclusion", [("Main Author", 1.0)]),
    "Compile Bibliography": ("Compile Bibliography", [("Student", 0.6), ("Author", 0.4)]),
    "Proofread": ("Proofread", [("Proofreader", 0.8), ("Supervisor", 0.2)]),
    "Internal Review": ("Internal Review", [("Supervisor", 0.65), ("Main Author", 0.35)]),
    "Revise Draft": ("Revise Draft", [("Main Author", 0.6), ("Author", 0.4)]),
    "Format Paper": ("Format Paper", [("Typesetter", 0.6), ("Main Author", 0.4)]),
    "Submit": ("Submit", [("Main Author", 1.0)]),
    "Assign Reviewers": ("Assign Reviewers", [("Editor", 1.0)]),
    "Review": (
        "Review",
        [("Reviewer A", 0.4), ("Reviewer B", 0.35), ("Reviewer C", 0.25)],
    ),
    "Notify Authors": ("Notify Authors", [("Editor", 1.0)]),
    "Prepare Rebuttal": ("Prepare Rebuttal", [("Main Author", 0.7), ("Author", 0.3)]),
    "Conclude": ("Conclude", [("Main Author", 0.8), ("Session Chair", 0.2)]),
}

_START_FLOW = [("Identify Problem", 0.4), ("Research Related Work", 0.6)]

# node key -> [(successor node key or END, probability)...]
_FLOW: dict[str, list[tuple[str, float]]] = {
    "Identify Problem": [("Research Related Work", 1.0)],
    # control flow after Research Related Work depends on the user, see _USER_FLOW
    "Develop Hypothesis": [("Experiment#hypothesis", 1.0)],
    "Experiment#hypothesis": [("Experiment#hypothesis", 0.12), ("Conduct Study", 0.88)],
    "Conduct Study": [("Analyze Results", 1.0)],
    "Develop Method": [("Experiment#method", 1.0)],
    "Experiment#method": [("Evaluate", 1.0)],
    "Evaluate": [("Analyze Results", 1.0)],
    "Analyze Results": [
        ("Interpret Findings", 0.3),
        ("Outline Paper", 0.35),
        ("Write Introduction", 0.35),
    ],
    "Interpret Findings": [("Write Method Section", 1.0)],
    "Outline Paper": [("Write Related Work", 0.5), ("Write Results Section", 0.5)],
    "Write Introduction": [("Write Related Work", 1.0)],
    "Write Related Work": [("Write Conclusion", 1.0)],
    "Write Method Section": [
        ("Create Figures", 0.3),
        ("Compile Bibliography", 0.15),
        ("Proofread", 0.1),
        ("Internal Review", 0.45),
    ],
    "Write Results Section": [("Create Figures", 1.0)],
    "Create Figures": [("Proofread", 1.0)],
    "Write Conclusion": [
        ("Compile Bibliography", 0.2),
        ("Proofread", 0.25),
        ("Internal Review", 0.55),
    ],
    "Compile Bibliography": [("Proofread", 1.0)],
    "Proofread": [("Internal Review", 1.0)],
    "Internal Review": [("Revise Draft", 0.15), ("Format Paper", 0.45), ("Submit", 0.4)],
    "Revise Draft": [("Format Paper", 1.0)],
    "Format Paper": [("Submit", 1.0)],
    "Submit": [("Assign Reviewers", 0.2), ("Review", 0.8)],
    "Assign Reviewers": [("Review", 1.0)],
    "Review": [("Notify Authors", 0.25), ("Conclude", 0.75)],
    "Notify Authors": [("Prepare Rebuttal", 0.35), ("Conclude", 0.65)],
    "Prepare Rebuttal": [("Submit", 1.0)],
    "Conclude": [(END, 1.0)],
}

# (node key, user) -> successor distribution overriding _FLOW; this is the
# data-to-control-flow dependency of the model.
_USER_FLOW: dict[tuple[str, str], list[tuple[str, float]]] = {
    ("Research Related Work", "Main Author"): [
        ("Develop Hypothesis", 0.6),
        ("Develop Method", 0.4),
    ],
    ("Research Related Work", "Author"): [
        ("Develop Hypothesis", 0.5),
        ("Develop Method", 0.5),
    ],
    ("Research Related Work", "Student"): [("Develop Method", 1.0)],
}


def paper_process_graph() -> LikelihoodGraph:
    """Build the bundled paper-authoring likelihood graph."""
    graph = LikelihoodGraph(attributes=[USER])
    graph.add_node(Node(START, START))
    graph.add_node(Node(END, END))

    for key, (activity, _) in _NODES.items():
        graph.add_node(Node(f"a:{key}", ACTIVITY_NODE, activity=activity))

    for activity, weight in _START_FLOW:
        graph.add_edge(START, f"a:{activity}", weight)

    for key, (_, group) in _NODES.items():
        for user, probability in group:
            vid = f"v:{key}/{USER}={user}"
            graph.add_node(Node(vid, VALUE_NODE, attribute=USER, value=user))
            graph.add_edge(f"a:{key}", vid, probability)
            flow = _USER_FLOW.get((key, user), _FLOW.get(key))
            if flow is None:
                raise AssertionError(f"no flow defined for {key!r}")
            for target, weight in flow:
                target_id = END if target == END else f"a:{target}"
                graph.add_edge(vid, target_id, weight)

    return ensure_valid(graph)
