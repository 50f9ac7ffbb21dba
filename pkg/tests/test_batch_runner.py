import inspect
import random
import sys
import threading
import time
from pathlib import Path

import pytest

# Ensure repo root on sys.path so local imports resolve
ROOT_DIR = Path(inspect.getfile(inspect.currentframe())).resolve().parents[1]  # type: ignore[arg-type]
if str(ROOT_DIR) not in sys.path:
    sys.path.insert(0, str(ROOT_DIR))

from rtinterp.batch_runner import BatchRunner, run_batch  # noqa: E402
from rtinterp.errors import NoNeighborsError  # noqa: E402


def _slow_square(x: int) -> int:
    # jitter so completion order differs from submission order
    time.sleep(random.uniform(0.0, 0.005))
    return x * x


def test_outcomes_follow_submission_order():
    with BatchRunner(_slow_square, max_workers=4) as runner:
        seqs = [runner.submit(i) for i in range(20)]
        outcomes = runner.finalise(timeout_per_item=5)

    assert seqs == list(range(20))
    assert [o.seq for o in outcomes] == seqs
    assert [o.value for o in outcomes] == [i * i for i in range(20)]
    assert all(o.ok for o in outcomes)


def test_thread_count_does_not_change_results():
    items = list(range(15))
    serial = [o.value for o in run_batch(_slow_square, items, max_workers=1)]
    pooled = [o.value for o in run_batch(_slow_square, items, max_workers=3)]
    assert serial == pooled


def test_single_worker_runs_inline():
    seen = []
    run_batch(lambda _: seen.append(threading.current_thread().name), [1, 2])
    assert seen == [threading.current_thread().name] * 2


def test_recoverable_errors_are_captured_per_item():
    def task(x):
        if x == 2:
            raise NoNeighborsError((0.0, 0.0, 0.0), 1.0)
        return x

    outcomes = run_batch(task, [1, 2, 3], max_workers=2)
    assert [o.ok for o in outcomes] == [True, False, True]
    assert isinstance(outcomes[1].error, NoNeighborsError)
    assert outcomes[1].item == 2


def test_unexpected_errors_propagate():
    def task(x):
        raise KeyError(x)

    with pytest.raises(KeyError):
        run_batch(task, [1], max_workers=2)
    with pytest.raises(KeyError):
        run_batch(task, [1], max_workers=1)


def test_invalid_worker_count():
    with pytest.raises(ValueError):
        BatchRunner(_slow_square, max_workers=0)
