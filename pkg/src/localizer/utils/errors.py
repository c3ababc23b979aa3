"""
Erreurs métier du localiseur.

Toutes dérivent de ValueError, comme les validations du reste du projet :
un appelant qui attrape ValueError continue de tout intercepter.
"""


class LocalizerError(ValueError):
    pass


class CloudParseError(LocalizerError):
    def __init__(self, line: int, reason: str):
        self.line = line
        self.reason = reason
        super().__init__(f"Erreur de lecture ligne {line} : {reason}")


class EmptyCloudError(LocalizerError):
    pass


class CapacityExceededError(LocalizerError):
    pass


class MapFormatError(LocalizerError):
    pass


class DegenerateScanError(LocalizerError):
    pass


class EmptySearchSpaceError(LocalizerError):
    pass


class LeafNodeError(LocalizerError):
    pass


class OracleTooLargeError(LocalizerError):
    pass


class InfeasiblePoseError(LocalizerError):
    pass
