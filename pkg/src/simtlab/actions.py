"""Conversion between read-count policies and READ/WRITE action sequences.

A policy g = (g_1..g_I) lists how many source tokens are read before each
target token is written.  The equivalent action string of length I + J has
a WRITE at step t exactly when t = g_i + i for some i, READ everywhere
else; trailing READs after the last WRITE are kept so the length is always
I + J.
"""

from __future__ import annotations

READ = "R"
WRITE = "W"


class ActionError(ValueError):
    pass


def policy_to_actions(g: list[int], source_len: int) -> str:
    if not g:
        raise ActionError("empty policy")
    prev = 0
    for i, gi in enumerate(g, start=1):
        if not 1 <= gi <= source_len:
            raise ActionError(f"g_{i}={gi} outside [1, {source_len}]")
        if gi < prev:
            raise ActionError(f"policy not monotone at position {i}")
        prev = gi
    total = len(g) + source_len
    write_steps = {gi + i for i, gi in enumerate(g, start=1)}
    return "".join(WRITE if t in write_steps else READ for t in range(1, total + 1))


def actions_to_policy(actions: str) -> list[int]:
    """Read counts preceding each WRITE; inverse of policy_to_actions."""
    g = []
    reads = 0
    for a in actions:
        if a == READ:
            reads += 1
        elif a == WRITE:
            g.append(reads)
        else:
            raise ActionError(f"unknown action {a!r}")
    if not g:
        raise ActionError("action sequence contains no WRITE")
    return g


def validate(actions: str, target_len: int, source_len: int) -> None:
    """Check action counts against the sentence lengths; raise on mismatch."""
    bad = set(actions) - {READ, WRITE}
    if bad:
        raise ActionError(f"unknown actions {sorted(bad)}")
    n_write = actions.count(WRITE)
    n_read = actions.count(READ)
    if n_write != target_len:
        raise ActionError(f"expected {target_len} WRITEs, found {n_write}")
    if n_read != source_len:
        raise ActionError(f"expected {source_len} READs, found {n_read}")
    if len(actions) != target_len + source_len:
        raise ActionError(
            f"expected length {target_len + source_len}, found {len(actions)}"
        )


def save_actions(sequences: list[str], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for seq in sequences:
            f.write(seq + "\n")


def load_actions(path) -> list[str]:
    with open(path, encoding="utf-8", newline=None) as f:
        return f.read().splitlines()
