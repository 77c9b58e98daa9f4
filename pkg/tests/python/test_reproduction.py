"""
Full ECG5000 runs of the published configuration.

Deselected by default; run with ``pytest -m slow`` and the UCR files in
``tests/data/ECG5000`` (or ``ECG5000_DIR``).
"""

from pathlib import Path

import pytest
from ecgtcn import (
    accuracy,
    balanced_accuracy,
    build_ecg_tcn,
    calibrate,
    confusion,
    count_params,
    fold_batchnorm,
    load_ucr,
    predict,
    qpredict_batch,
    quantize_network,
    stratified_holdout,
    train,
)

pytestmark = pytest.mark.slow


def test_train_quantize_evaluate(ecg5000_dir: Path) -> None:
    """The best seed reaches 0.92 accuracy and 0.85 balanced; INT-8 loses at most a point."""
    full = load_ucr(ecg5000_dir / "ECG5000_TRAIN.txt")
    test = load_ucr(ecg5000_dir / "ECG5000_TEST.txt")
    assert (len(full), len(test)) == (500, 4500)

    best = None
    for seed in range(3):
        train_ds, val_ds = stratified_holdout(full, 0.2, seed=seed)
        net = train(build_ecg_tcn(seed=seed), train_ds, val_ds, epochs=20, seed=seed).network
        cm = confusion(predict(net, test.x), test.y)
        acc, bal = accuracy(cm), balanced_accuracy(cm)
        if best is None or acc > best[0]:
            best = (acc, bal, net)
    assert best is not None
    float_acc, float_bal, net = best
    assert float_acc >= 0.92
    assert float_bal >= 0.85

    folded = fold_batchnorm(net)
    qnet = quantize_network(folded, calibrate(folded, full), float_param_count=count_params(net))
    preds, _ = qpredict_batch(qnet, test.x, jobs=4)
    assert accuracy(confusion(preds, test.y)) >= float_acc - 0.01
