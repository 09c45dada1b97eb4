"""Synthetic geographic captions assembled from per-category templates."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .geocell import Sample

CATEGORIES = ("location", "climate", "compass", "month", "traffic")

KOPPEN_NAMES = {
    "Af": "tropical rainforest", "Am": "tropical monsoon", "Aw": "tropical savanna",
    "BWh": "hot desert", "BWk": "cold desert", "BSh": "hot semi-arid", "BSk": "cold semi-arid",
    "Csa": "hot-summer Mediterranean", "Csb": "warm-summer Mediterranean",
    "Csc": "cold-summer Mediterranean", "Cwa": "monsoon-influenced humid subtropical",
    "Cwb": "subtropical highland", "Cwc": "cold subtropical highland",
    "Cfa": "humid subtropical", "Cfb": "temperate oceanic", "Cfc": "subpolar oceanic",
    "Dsa": "hot-summer Mediterranean continental", "Dsb": "warm-summer Mediterranean continental",
    "Dsc": "dry-summer subarctic", "Dsd": "dry-summer extremely cold subarctic",
    "Dwa": "monsoon-influenced hot-summer humid continental",
    "Dwb": "monsoon-influenced warm-summer humid continental",
    "Dwc": "monsoon-influenced subarctic", "Dwd": "monsoon-influenced extremely cold subarctic",
    "Dfa": "hot-summer humid continental", "Dfb": "warm-summer humid continental",
    "Dfc": "subarctic", "Dfd": "extremely cold subarctic", "ET": "tundra", "EF": "ice cap",
}

MONTH_NAMES = ("January", "February", "March", "April", "May", "June", "July", "August",
               "September", "October", "November", "December")

COMPASS_POINTS = ("north", "northeast", "east", "southeast", "south", "southwest", "west",
                  "northwest")

DEFAULT_TEMPLATES = {
    "location": (
        "A photo I took in the region of {region} in {country}.",
        "This place is located in {region}, {country}.",
        "A street view photo from {region} in {country}.",
    ),
    "climate": (
        "This location has a {climate} climate.",
        "The climate here is {climate}.",
    ),
    "compass": (
        "This photo is facing {direction}.",
        "The camera points {direction}.",
    ),
    "month": (
        "This photo was taken in {month}.",
        "The picture was taken in the month of {month}.",
    ),
    "traffic": (
        "In this location, people drive on the {side} side of the road.",
        "Cars here drive on the {side}.",
    ),
}


@dataclass(frozen=True)
class CaptionTemplateSet:
    templates: Mapping[str, Sequence[str]] = field(default_factory=lambda: dict(DEFAULT_TEMPLATES))

    def __post_init__(self):
        unknown = set(self.templates) - set(CATEGORIES)
        if unknown:
            raise ValueError(f"unknown caption categories: {sorted(unknown)}")
        for cat, items in self.templates.items():
            if not items:
                raise ValueError(f"category {cat!r} has no templates")
            for t in items:
                try:
                    t.format(**_PLACEHOLDER_PROBE[cat])
                except KeyError as exc:
                    raise ValueError(f"template {t!r} uses unknown placeholder {exc}") from None


_PLACEHOLDER_PROBE = {
    "location": {"region": "", "country": ""},
    "climate": {"climate": ""},
    "compass": {"direction": ""},
    "month": {"month": ""},
    "traffic": {"side": ""},
}


def compass_direction(bearing_deg: float) -> str:
    return COMPASS_POINTS[int(((bearing_deg % 360.0) + 22.5) // 45.0) % 8]


def caption_fields(sample: Sample) -> dict[str, dict[str, str]]:
    """Placeholder values per category for the categories the sample supports."""
    out: dict[str, dict[str, str]] = {}
    country = sample.country_name or sample.country
    region = sample.region or sample.admin1
    if country and region:
        out["location"] = {"region": region, "country": country}
    if sample.climate:
        out["climate"] = {"climate": KOPPEN_NAMES.get(sample.climate, sample.climate)}
    if sample.bearing is not None:
        out["compass"] = {"direction": compass_direction(sample.bearing)}
    if sample.month is not None and 1 <= int(sample.month) <= 12:
        out["month"] = {"month": MONTH_NAMES[int(sample.month) - 1]}
    if sample.drive_side in ("left", "right"):
        out["traffic"] = {"side": sample.drive_side}
    return out


def generate_caption(sample: Sample, templates: CaptionTemplateSet = CaptionTemplateSet(),
                     seed: int = 0, categories: Sequence[str] = CATEGORIES) -> str:
    """One template per available category, concatenated in fixed order.

    The template choice is seeded by ``seed`` and the sample id, so a caption
    is reproducible independently of which other samples are captioned.
    """
    rng = random.Random(f"{seed}:{sample.id}")
    fields = caption_fields(sample)
    parts = []
    for cat in CATEGORIES:
        if cat not in categories or cat not in fields or cat not in templates.templates:
            continue
        choices = templates.templates[cat]
        parts.append(choices[rng.randrange(len(choices))].format(**fields[cat]))
    return " ".join(parts)
