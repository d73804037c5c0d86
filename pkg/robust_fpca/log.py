import logging


class AccumulatingLogHandler(logging.Handler):
    """Keeps formatted records at or above its level; the run report reads them back."""

    def __init__(self, level=logging.WARNING):
        super().__init__(level=level)
        self.log_records = []

    def emit(self, record):
        log_entry = self.format(record)
        self.log_records.append(log_entry)

    def get_accumulated_logs(self):
        return '\n'.join(self.log_records)

    def clear(self):
        self.log_records = []


def find_accumulating_handler(logger=None):
    logger = logger or logging.getLogger()
    for handler in logger.handlers:
        if isinstance(handler, AccumulatingLogHandler):
            return handler
    return None
