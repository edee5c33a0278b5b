"""Module with function-related utilities
"""
import sys
import time
from datetime import datetime, timedelta
from functools import wraps


def elapsed_str(elapsed_ns):
    """Duration given in nanoseconds as seconds and as H:MM:SS

    >>> elapsed_str(1_102_849_000)
    '1.1028 s = 0:00:01.102849'
    """
    seconds = elapsed_ns / 1e9
    return f"{seconds:.4f} s = {timedelta(seconds=seconds)}"


def timed(func):
    """Decorator printing start time, end time and duration of `func`

    Everything is printed to standard error, so that it does not mix with
    data written to standard output.  Meant for `main()` of pipeline
    scripts, so the command line is printed instead of arguments.

    Example:
        >>> @timed
        ... def main():
        ...    time.sleep(1.1)
        ...
        >>> main()
        Start time: 2024-03-08 12:00:56.486206 scripts/bench/run_bench.py ring 10,50 5 ring.csv
        End time: 2024-03-08 12:00:57.602275, main() took 1.1028 s = 0:00:01.102849
    """
    @wraps(func)
    def wrapper_timed(*args, **kwargs):
        print(f"Start time: {datetime.now()} {' '.join(sys.argv)}", file=sys.stderr)
        start_ns = time.perf_counter_ns()
        try:
            return func(*args, **kwargs)
        finally:
            elapsed = elapsed_str(time.perf_counter_ns() - start_ns)
            print(f"End time: {datetime.now()}, {func.__name__}() took {elapsed}", file=sys.stderr)

    return wrapper_timed
