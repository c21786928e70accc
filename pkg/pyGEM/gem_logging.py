#  Copyright (c) 2024 The pyGEM developers.
#  Distributed under the terms of the MIT license.
import logging
import sys
from io import TextIOBase
from typing import Optional, Union, TextIO


# Every pyGEM module logs through log() below; messages go to stderr unless another stream is attached.
class GEMFormatter(logging.Formatter):
    """
    Formats records as ``[prefix] [LEVEL] [module] [function] message``; records logged with ``raw=True`` (tables
    printed by the CLI) are passed through unchanged.
    """
    def __init__(self, prefix: str = "pyGEM"):
        super().__init__(f"[{prefix}] [%(levelname)s] [%(module)s] [%(funcName)s] %(message)s")

    def format(self, record: logging.LogRecord) -> str:
        if getattr(record, "raw", False):
            return record.getMessage()
        return super().format(record)


def set_output_stream(stream: Union[TextIOBase, TextIO], level=logging.INFO, prefix="pyGEM") -> logging.Handler:
    """
    Adds a handler which writes formatted log messages to the given stream.

    :param stream: the stream to write log messages to.
    :param level: the minimum severity handled by this stream.
    :param prefix: the prefix written at the start of every message.
    :return: the handler which was added, so that it can later be passed to ``remove_output_stream``.
    """
    handler = logging.StreamHandler(stream)
    handler.setFormatter(GEMFormatter(prefix))
    handler.setLevel(level)
    _gem_logger.addHandler(handler)
    return handler


def remove_output_stream(handler: Optional[logging.Handler]):
    if handler is not None:
        _gem_logger.removeHandler(handler)


def set_severity(severity: int):
    """
    Sets the minimum severity of messages emitted by pyGEM. The CLI maps ``-v`` to ``logging.DEBUG`` and ``-q`` to
    ``logging.WARNING``.

    :param severity: a ``logging`` level.
    """
    _gem_logger.setLevel(severity)


def get_severity() -> int:
    return _gem_logger.level


def log(msg, *args, severity=logging.DEBUG, raw=False):
    """
    Logs a message through the pyGEM logger. Per-epoch and per-layer detail is logged at ``DEBUG``, pipeline milestones
    at ``INFO``.

    :param msg: the message, optionally with ``%`` placeholders filled from ``args``.
    :param args: values for the placeholders in ``msg``.
    :param severity: a ``logging`` level.
    :param raw: when set, the message is written without the ``[pyGEM] [LEVEL] ...`` prefix.
    """
    _gem_logger.log(severity, msg, *args, stacklevel=2, extra={"raw": raw})


if "_gem_logger" not in globals():
    _gem_logger = logging.getLogger("pyGEM")
    _gem_logger.setLevel(logging.INFO)
    # Records never reach the root logger.
    _gem_logger.propagate = False
    set_output_stream(sys.stderr, level=logging.DEBUG)
