"""Per-image confidence: piecewise (DPCS) and general (GCS) scoring.

Both scores combine the lane visibility score S_L with a weighted deduction
over the other factor severities. DPCS switches behaviour on S_L bands so a
mid-visibility image is judged on visibility alone, while GCS applies one
formula everywhere. Inactive factors (per context) contribute nothing.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, replace
from typing import Mapping

from .errors import ConfigError, InvalidInputError
from .scoring import DEGRADATION_FACTORS, FACTOR_BY_KEY, FactorKind, ImageAssessment


@dataclass(frozen=True)
class WeightProfile:
    """Lane weight plus one weight per degradation factor."""

    profile_name: str
    lane_weight: float
    factor_weights: Mapping[FactorKind, float]

    def __post_init__(self):
        if self.lane_weight <= 0.0:
            raise InvalidInputError("lane_weight must be positive")
        weights = dict(self.factor_weights)
        missing = [f.key for f in DEGRADATION_FACTORS if f not in weights]
        if missing:
            raise InvalidInputError(f"missing factor weights: {', '.join(missing)}")
        extra = [f.key for f in weights if f not in DEGRADATION_FACTORS]
        if extra:
            raise InvalidInputError(f"unexpected factor weights: {', '.join(extra)}")
        if any(w < 0.0 for w in weights.values()):
            raise InvalidInputError("factor weights must be >= 0")
        object.__setattr__(self, "factor_weights", weights)


# Production weighting: lane visibility dominates at 1.0, the common
# degradations share 0.2, rare sandstorms get 0.1.
DEFAULT_WEIGHTS = WeightProfile(
    profile_name="default",
    lane_weight=1.0,
    factor_weights={
        FactorKind.BLUR_DAY: 0.2,
        FactorKind.BLUR_NIGHT: 0.2,
        FactorKind.BLUR_STREETLIGHT: 0.2,
        FactorKind.ILLUMINATION: 0.2,
        FactorKind.RAIN: 0.2,
        FactorKind.SNOW: 0.2,
        FactorKind.FOG: 0.2,
        FactorKind.SANDSTORM: 0.1,
        FactorKind.OCCLUSION: 0.2,
        FactorKind.DEGRADATION: 0.2,
    },
)


@dataclass(frozen=True)
class ContextProfile:
    """Which degradation factors are relevant under the current conditions."""

    active_factors: frozenset[FactorKind]
    description: str = ""

    def __post_init__(self):
        object.__setattr__(
            self,
            "active_factors",
            frozenset(self.active_factors) | {FactorKind.LANE_VISIBILITY},
        )

    def is_active(self, factor: FactorKind) -> bool:
        return factor in self.active_factors


ALL_FACTORS_CONTEXT = ContextProfile(
    active_factors=frozenset(DEGRADATION_FACTORS), description="all"
)

# Daytime clear-weather collection: weather factors and night blur are
# irrelevant and would only invite spurious deductions.
CLEAR_DAY_CONTEXT = ContextProfile(
    active_factors=frozenset(
        {
            FactorKind.BLUR_DAY,
            FactorKind.ILLUMINATION,
            FactorKind.DEGRADATION,
            FactorKind.OCCLUSION,
        }
    ),
    description="clear-day",
)

BUILTIN_CONTEXTS = {
    "all": ALL_FACTORS_CONTEXT,
    "clear-day": CLEAR_DAY_CONTEXT,
}


@dataclass(frozen=True)
class ConfidenceDetail:
    """Confidence value plus how it was reached, for diagnostics."""

    value: float
    branch: str
    raw_value: float
    clamped: bool


def weighted_deduction(
    assessment: ImageAssessment,
    weights: WeightProfile,
    context: ContextProfile,
) -> float:
    """Sum of score * weight over the active degradation factors."""
    return sum(
        assessment.score_for(f) * weights.factor_weights[f]
        for f in DEGRADATION_FACTORS
        if context.is_active(f)
    )


def _clamp(raw: float, branch: str) -> ConfidenceDetail:
    value = min(10.0, max(0.0, raw))
    return ConfidenceDetail(value=value, branch=branch, raw_value=raw, clamped=value != raw)


def dpcs_detail(
    assessment: ImageAssessment,
    weights: WeightProfile = DEFAULT_WEIGHTS,
    context: ContextProfile = ALL_FACTORS_CONTEXT,
) -> ConfidenceDetail:
    """Dynamic piecewise confidence with branch/clamp diagnostics.

    S_L = 0 dominates every other case: such images are unusable regardless
    of the remaining scores.
    """
    s_l = assessment.lane_visibility
    if s_l is None:
        raise InvalidInputError(f"image {assessment.image_id!r} has no lane visibility score")
    lane_term = s_l * weights.lane_weight
    deduction = weighted_deduction(assessment, weights, context)
    if s_l == 0:
        return ConfidenceDetail(value=0.0, branch="zero", raw_value=0.0, clamped=False)
    if s_l < 5:
        return _clamp(abs(lane_term - deduction), "low")
    if s_l <= 7:
        return _clamp(lane_term, "mid")
    return _clamp(lane_term - deduction, "high")


def dpcs(
    assessment: ImageAssessment,
    weights: WeightProfile = DEFAULT_WEIGHTS,
    context: ContextProfile = ALL_FACTORS_CONTEXT,
) -> float:
    return dpcs_detail(assessment, weights, context).value


def gcs_detail(
    assessment: ImageAssessment,
    weights: WeightProfile = DEFAULT_WEIGHTS,
    context: ContextProfile = ALL_FACTORS_CONTEXT,
) -> ConfidenceDetail:
    """General confidence: |S_L * W_L - deduction| whenever S_L > 0."""
    s_l = assessment.lane_visibility
    if s_l is None:
        raise InvalidInputError(f"image {assessment.image_id!r} has no lane visibility score")
    if s_l == 0:
        return ConfidenceDetail(value=0.0, branch="zero", raw_value=0.0, clamped=False)
    raw = abs(s_l * weights.lane_weight - weighted_deduction(assessment, weights, context))
    return _clamp(raw, "general")


def gcs(
    assessment: ImageAssessment,
    weights: WeightProfile = DEFAULT_WEIGHTS,
    context: ContextProfile = ALL_FACTORS_CONTEXT,
) -> float:
    return gcs_detail(assessment, weights, context).value


def apply_context(context: ContextProfile, assessment: ImageAssessment) -> ImageAssessment:
    """Zero out the scores of inactive factors; lane visibility is untouched."""
    scores = {
        f: (s if context.is_active(f) else 0)
        for f, s in assessment.factor_scores.items()
    }
    return replace(assessment, factor_scores=scores)


def with_confidence(
    assessment: ImageAssessment,
    weights: WeightProfile = DEFAULT_WEIGHTS,
    context: ContextProfile = ALL_FACTORS_CONTEXT,
    method: str = "dpcs",
) -> ImageAssessment:
    """Return a copy with the confidence field filled in."""
    if method == "dpcs":
        value = dpcs(assessment, weights, context)
    elif method == "gcs":
        value = gcs(assessment, weights, context)
    else:
        raise ConfigError(f"unknown confidence method {method!r}")
    return replace(assessment, confidence=value)


def _parse_factor(name: str) -> FactorKind:
    factor = FACTOR_BY_KEY.get(name.strip())
    if factor is None:
        raise ConfigError(f"unknown factor name {name.strip()!r}")
    return factor


def load_profiles(path) -> tuple[dict[str, WeightProfile], dict[str, ContextProfile]]:
    """Read weight and context profiles from a key-value config file.

    Schema: each ``[weights.NAME]`` section maps factor names to weights and
    holds ``lane_weight``; each ``[context.NAME]`` section lists the active
    factors in a comma-separated ``factors`` key (or ``all``).
    """
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read profile file {path}")
    weight_profiles: dict[str, WeightProfile] = {}
    context_profiles: dict[str, ContextProfile] = dict(BUILTIN_CONTEXTS)
    for section in parser.sections():
        if section.startswith("weights.") or section == "weights":
            name = section.partition(".")[2] or "default"
            items = dict(parser.items(section))
            try:
                lane_weight = float(items.pop("lane_weight", "1.0"))
                factor_weights = {
                    _parse_factor(k): float(v) for k, v in items.items()
                }
                weight_profiles[name] = WeightProfile(
                    profile_name=name,
                    lane_weight=lane_weight,
                    factor_weights=factor_weights,
                )
            except (ValueError, InvalidInputError) as exc:
                raise ConfigError(f"bad weight profile [{section}]: {exc}") from exc
        elif section.startswith("context.") or section == "context":
            name = section.partition(".")[2] or "default"
            raw = parser.get(section, "factors", fallback="all").strip()
            if raw == "all":
                active = frozenset(DEGRADATION_FACTORS)
            else:
                active = frozenset(
                    _parse_factor(tok) for tok in raw.split(",") if tok.strip()
                )
            context_profiles[name] = ContextProfile(active_factors=active, description=name)
    return weight_profiles, context_profiles
