"""Four-state oncology disease model: stable disease, response, progression, death.

States are numbered 1 (SD, the entry state), 2 (response), 3 (progressive
disease) and 4 (death, absorbing). Six directed transitions are possible;
their canonical order fixes the transition indices 1..6 used throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

SD, RESPONSE, PD, DEATH = 1, 2, 3, 4

STATE_LABELS = {SD: "SD", RESPONSE: "Response", PD: "PD", DEATH: "Death"}

Transition = tuple[int, int]

#: Canonical transition order; index i+1 is the conventional transition number.
TRANSITIONS: tuple[Transition, ...] = (
    (1, 2),
    (1, 3),
    (1, 4),
    (2, 3),
    (2, 4),
    (3, 4),
)


def transition_index(transition: Transition) -> int:
    """1-based index of a transition in the canonical order."""
    return TRANSITIONS.index(transition) + 1


def format_transition(transition: Transition) -> str:
    return f"{transition[0]}->{transition[1]}"


def parse_transition(text: str) -> Transition:
    i, j = text.split("->")
    transition = (int(i), int(j))
    if transition not in TRANSITIONS:
        raise ValueError(f"unknown transition {text!r}")
    return transition


@dataclass(frozen=True)
class StateModel:
    """Directed acyclic state graph with a single absorbing death state."""

    states: dict[int, str] = field(default_factory=lambda: dict(STATE_LABELS))
    transitions: tuple[Transition, ...] = TRANSITIONS

    def __post_init__(self):
        for i, j in self.transitions:
            if i not in self.states or j not in self.states:
                raise ValueError(f"transition ({i},{j}) references unknown state")
            if i >= j:
                # state numbering is topological, so i < j guarantees acyclicity
                raise ValueError(f"transition ({i},{j}) violates topological order")
        absorbing = max(self.states)
        if any(i == absorbing for i, _ in self.transitions):
            raise ValueError(f"state {absorbing} must be absorbing")

    @property
    def absorbing_state(self) -> int:
        return max(self.states)

    def exits(self, state: int) -> tuple[Transition, ...]:
        """Out-transitions of a state, in canonical order."""
        return tuple(t for t in self.transitions if t[0] == state)


#: The default four-state model used by every operation in this package.
FOUR_STATE_MODEL = StateModel()
