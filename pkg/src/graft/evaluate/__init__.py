"""Metrics, parameter accounting and the node/edge prompt ablation."""
from graft.evaluate.budget import ParamBudget, count_params, count_trainable
from graft.evaluate.metrics import multitask_auc, roc_auc


def __getattr__(name):
    # the ablation runner depends on the trainer, which depends on this package
    if name in ("run_ablation", "AblationCell", "AblationReport"):
        from graft.evaluate import ablation

        return getattr(ablation, name)
    raise AttributeError(name)


__all__ = [
    "AblationCell",
    "AblationReport",
    "ParamBudget",
    "count_params",
    "count_trainable",
    "multitask_auc",
    "roc_auc",
    "run_ablation",
]
