from __future__ import annotations

from vqdrift.exception import Error


class StaleTapeError(Error):
    pass


class InvalidParameterFile(Error):
    pass
