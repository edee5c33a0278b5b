"""Module with file-related utilities
"""
import contextlib


def make_opened(file_or_path, mode='r'):
    """Make `file_or_path` opened, suitable for use in `with` statement

    Paths are opened (as UTF-8 text in text modes) and closed on exit;
    already opened file-like objects, like io.StringIO or sys.stdout,
    are passed through and are left open.

    Examples:
        >>> import io
        >>> buffer = io.StringIO()
        >>> with make_opened(buffer, 'w') as out:
        ...     print('0.5\\tmm1:arrival\\t0\\t0:0->1', file=out)
        >>> buffer.closed
        False

        >>> with make_opened('models/mm1.model') as fp:
        ...     lines = fp.readlines()

    :param file_or_path: Path or path to a file, or a file-like object like io.StringIO
    :type file_or_path: pathlib.Path or str or os.PathLike or typing.IO
    :param str mode: mode in which the file is opened; defaults to 'r',
        which means open for reading in text mode
    :return: context manager giving opened file-like object
    :rtype: typing.ContextManager[typing.IO]
    """
    if hasattr(file_or_path, 'write') or hasattr(file_or_path, 'read'):
        # NOTE: no checking that mode matches the object!
        return contextlib.nullcontext(file_or_path)

    encoding = None if 'b' in mode else 'utf-8'
    try:
        # file_or_path is pathlib.Path like object
        return file_or_path.open(mode, encoding=encoding)
    except AttributeError:
        # there is no .open() method
        # file_or_path is str or os.PathLike object
        return open(file_or_path, mode=mode, encoding=encoding)
