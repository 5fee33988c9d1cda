"""Detection rate, false-positive rate and the combined rate over labeled frames.

The combined rate averages DR with the true-negative rate,
``cr = (dr + (1 - fpr)) / 2``: a lower FPR must raise it.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Iterable, Optional, Sequence

from .errors import EmptyClass
from .imaging import DDOS, LEGITIMATE


@dataclass
class EvalReport:
    tp: int
    fn: int
    fp: int
    tn: int
    dataset: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)

    @property
    def attacks(self) -> int:
        return self.tp + self.fn

    @property
    def normals(self) -> int:
        return self.fp + self.tn

    @property
    def total(self) -> int:
        return self.attacks + self.normals

    @property
    def dr(self) -> float:
        return self.tp / self.attacks

    @property
    def fpr(self) -> float:
        return self.fp / self.normals

    @property
    def cr(self) -> float:
        # exact rational arithmetic, rounded once
        return float(combined_rate(Fraction(self.tp, self.attacks), Fraction(self.fp, self.normals)))

    def to_dict(self) -> dict:
        out = asdict(self)
        out.update(dr=self.dr, fpr=self.fpr, cr=self.cr, total=self.total)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def summary(self) -> str:
        return (
            f"attacks {self.attacks} (detected {self.tp}), normal {self.normals} "
            f"(false alarms {self.fp})\n"
            f"DR  {100 * self.dr:6.2f}%\nFPR {100 * self.fpr:6.2f}%\nCR  {100 * self.cr:6.2f}%"
        )


def combined_rate(dr, fpr):
    return (dr + (1 - fpr)) / 2


def confusion(truth: Sequence[str], predicted: Sequence[str], **info) -> EvalReport:
    """Count outcomes; ``ddos`` is the positive class."""
    if len(truth) != len(predicted):
        raise ValueError("truth and predictions differ in length")
    tp = fn = fp = tn = 0
    for t, p in zip(truth, predicted):
        if t == DDOS:
            if p == DDOS:
                tp += 1
            else:
                fn += 1
        elif t == LEGITIMATE:
            if p == DDOS:
                fp += 1
            else:
                tn += 1
        else:
            raise ValueError(f"frame label {t!r} is neither {DDOS!r} nor {LEGITIMATE!r}")
    if tp + fn == 0:
        raise EmptyClass("no attack frames in the evaluation set")
    if fp + tn == 0:
        raise EmptyClass("no legitimate frames in the evaluation set")
    return EvalReport(tp, fn, fp, tn, **info)


def evaluate(model, labeled_frames: Iterable, jobs: int = 1, threshold: float = 0.0,
             dataset: Optional[dict] = None) -> EvalReport:
    """Run the prediction pipeline over ``(pixels, label)`` pairs and score it."""
    from .pipeline import predict_frames

    frames = list(labeled_frames)
    truth = [label for _, label in frames]
    if DDOS not in truth:
        raise EmptyClass("no attack frames in the evaluation set")
    if LEGITIMATE not in truth:
        raise EmptyClass("no legitimate frames in the evaluation set")
    preds = predict_frames(model, [px for px, _ in frames], jobs=jobs, threshold=threshold)
    return confusion(truth, [p.label for p in preds], dataset=dataset or {},
                     model=dict(model.metadata))
