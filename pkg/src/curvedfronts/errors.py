"""Error types. Each carries a short machine-readable code."""


class FrontError(Exception):
    code = "error"

    def __init__(self, message: str = "", **details):
        super().__init__(f"{self.code}: {message}" if message else self.code)
        self.details = details


def _make(name, code):
    return type(name, (FrontError,), {"code": code})


InvalidMedium = _make("InvalidMedium", "invalid-medium")
RejectedConfiguration = _make("RejectedConfiguration", "rejected-configuration")
NumericalBlowup = _make("NumericalBlowup", "numerical-blowup")
InvalidShift = _make("InvalidShift", "invalid-shift")
FrontLeftWindow = _make("FrontLeftWindow", "front-left-window")
SpeedUnresolved = _make("SpeedUnresolved", "speed-unresolved")
PossiblyNoFront = _make("PossiblyNoFront", "possibly-no-front")
DiagnosticFailure = _make("DiagnosticFailure", "diagnostic-failure")
CurveUnusable = _make("CurveUnusable", "curve-unusable")
NoPairs = _make("NoPairs", "no-pairs")
InvalidAngles = _make("InvalidAngles", "invalid-angles")
InvalidCurve = _make("InvalidCurve", "invalid-curve")
OutOfAtlas = _make("OutOfAtlas", "out-of-atlas")
InvalidAuxiliaryAngle = _make("InvalidAuxiliaryAngle", "invalid-auxiliary-angle")
OutsideValidity = _make("OutsideValidity", "outside-validity")
ConstructionFaulted = _make("ConstructionFaulted", "construction-faulted")
WindowTooSmall = _make("WindowTooSmall", "window-too-small")
RadiiExceedWindow = _make("RadiiExceedWindow", "radii-exceed-window")
InvalidInitialData = _make("InvalidInitialData", "invalid-initial-data")
InvalidTriple = _make("InvalidTriple", "invalid-triple")
ConfigError = _make("ConfigError", "config-error")
MissingArtifact = _make("MissingArtifact", "missing-artifact")
