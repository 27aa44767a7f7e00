"""Filesystem helper shared by the atomic writers."""

import os


def fchmod_default(fd: int) -> None:
    """Widen a mkstemp file (created 0600) to the process default mode.

    Artifacts written through the atomic temp-then-rename path should end
    up with the same permissions a plain open() would have produced.
    """
    mask = os.umask(0)
    os.umask(mask)
    os.fchmod(fd, 0o666 & ~mask)
