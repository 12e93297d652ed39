import singer


LOGGER = singer.get_logger()


def log_progress(stage: str, done: int, total: int, every: int = 10) -> None:
    """Emit an info line every `every` items and on the last one."""
    if total and (done % every == 0 or done == total):
        LOGGER.info("{}: {}/{}".format(stage, done, total))
