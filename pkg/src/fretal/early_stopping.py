"""Patience-based early stopping on a validation score (higher is better)."""

from typing import Literal, Sequence

Decision = Literal["continue", "stop"]


class EarlyStopping:
    def __init__(self, patience: int = 5, min_delta: float = 1e-6):
        if patience < 1:
            raise ValueError("patience must be at least 1")
        self.patience = patience
        self.min_delta = min_delta
        self.best_score = float("-inf")
        self.best_epoch = -1
        self.counter = 0
        self.early_stop = False
        self._epoch = -1

    def __call__(self, score: float) -> Decision:
        """Record one epoch's score; returns whether training should stop."""
        self._epoch += 1
        if score > self.best_score + self.min_delta:
            self.best_score = score
            self.best_epoch = self._epoch
            self.counter = 0
        else:
            self.counter += 1
            if self.counter >= self.patience:
                self.early_stop = True
        return "stop" if self.early_stop else "continue"

    @property
    def improved(self) -> bool:
        return self.counter == 0


def early_stopper(history: Sequence[float], patience: int, min_delta: float = 1e-6) -> Decision:
    """Replay a whole validation history through EarlyStopping."""
    stopper = EarlyStopping(patience=patience, min_delta=min_delta)
    decision: Decision = "continue"
    for score in history:
        decision = stopper(score)
    return decision
