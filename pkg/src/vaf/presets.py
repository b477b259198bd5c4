"""Named parameter presets.

``cern-2013`` ramp-up rates are not published directly. They are the unique
solution of ``calibrate_from_claims(240 h, 2.70 h, 3.30 h)``, i.e. the site
that completes 10 days of serialized work in 2 h 42 min pulling versus
3 h 18 min pushing. Values are frozen here in per-hour units and exposed in
per-second units, which is what the simulators use.
"""

from .analytic_model import RampUpParams
from .errors import InputError

_CERN_2013_PER_HOUR = RampUpParams(1215.5868258264595, 12.213232271805182)

RAMPUP_PRESETS = {
    "cern-2013": _CERN_2013_PER_HOUR.rescaled(1 / 3600),
}

# VM request-to-boot latency, (mean, stddev) in seconds
LATENCY_PRESETS = {
    "cern-2013": (375.0, 39.0),
    "torino-2013": (351.0, 21.0),
}


def rampup_preset(name):
    try:
        return RAMPUP_PRESETS[name]
    except KeyError:
        raise InputError(
            f"unknown ramp-up preset {name!r} (known: {', '.join(sorted(RAMPUP_PRESETS))})"
        ) from None


def latency_preset(name):
    try:
        return LATENCY_PRESETS[name]
    except KeyError:
        raise InputError(
            f"unknown latency preset {name!r} (known: {', '.join(sorted(LATENCY_PRESETS))})"
        ) from None
