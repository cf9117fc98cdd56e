# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.

# pylint: disable=bare-except
import logging
import tqdm

LOGGER = logging.getLogger(__name__)

LOG_FMT = "%(asctime)s %(name)-12s %(levelname)-8s %(message)s"


class TqdmLoggingHandler(logging.Handler):
    def __init__(self, level=logging.NOTSET):
        super().__init__(level)

    def emit(self, record):
        try:
            msg = self.format(record)
            tqdm.tqdm.write(msg)
            self.flush()
        except (KeyboardInterrupt, SystemExit):
            raise
        except:
            self.handleError(record)


def console_logging(level=logging.WARNING):
    """Send records of the package logger at `level` and above through tqdm"""
    logger = logging.getLogger("prompt_offset")
    logger.setLevel(logging.DEBUG)
    for handler in list(logger.handlers):
        if isinstance(handler, TqdmLoggingHandler):
            logger.removeHandler(handler)
    console = TqdmLoggingHandler(level)
    console.setFormatter(logging.Formatter(LOG_FMT, datefmt="%m-%d %H:%M"))
    logger.addHandler(console)
    return logger
