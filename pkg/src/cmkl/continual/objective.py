from __future__ import annotations


def total_loss(task_loss, ewc_penalty, replay_loss, alpha: float, task_index: int):
    """Task loss, plus EWC and alpha-weighted replay terms from the second task on.

    Works on plain floats or tape nodes.
    """
    if task_index <= 1:
        return task_loss
    if alpha == 0.0:
        return task_loss + ewc_penalty
    return task_loss + ewc_penalty + alpha * replay_loss
