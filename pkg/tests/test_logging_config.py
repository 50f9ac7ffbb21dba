import inspect
import logging
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path

import pytest

ROOT_DIR = Path(inspect.getfile(inspect.currentframe())).resolve().parents[1]  # type: ignore[arg-type]
if str(ROOT_DIR) not in sys.path:
    sys.path.insert(0, str(ROOT_DIR))

from rtinterp.logging_config import reset_logging, setup_logging  # noqa: E402


@pytest.fixture(autouse=True)
def _clean_logging():
    level = logging.getLogger().level
    reset_logging()
    yield
    reset_logging()
    logging.getLogger().setLevel(level)


def _ours(root: logging.Logger, before):
    return [h for h in root.handlers if h not in before]


def test_file_and_console_handlers_installed(tmp_path):
    root = logging.getLogger()
    before = list(root.handlers)
    log_file = tmp_path / "nested" / "run.log"

    setup_logging(log_file=log_file, level="debug")
    logging.getLogger("rtinterp.test").info("hello ledger")

    handlers = _ours(root, before)
    assert any(isinstance(h, RotatingFileHandler) for h in handlers)
    assert len(handlers) == 2
    assert root.level == logging.DEBUG
    for h in handlers:
        h.flush()
    text = log_file.read_text(encoding="utf-8")
    assert "INFO" in text and "rtinterp.test" in text and "hello ledger" in text


def test_setup_is_idempotent(tmp_path):
    root = logging.getLogger()
    before = list(root.handlers)
    setup_logging(log_file=tmp_path / "a.log")
    setup_logging(log_file=tmp_path / "b.log")
    assert len(_ours(root, before)) == 2
    assert not (tmp_path / "b.log").exists()


def test_console_only(tmp_path):
    root = logging.getLogger()
    before = list(root.handlers)
    setup_logging(log_file=None)
    handlers = _ours(root, before)
    assert len(handlers) == 1
    assert not isinstance(handlers[0], RotatingFileHandler)


def test_reset_detaches_handlers(tmp_path):
    root = logging.getLogger()
    before = list(root.handlers)
    setup_logging(log_file=tmp_path / "x.log")
    reset_logging()
    assert _ours(root, before) == []
