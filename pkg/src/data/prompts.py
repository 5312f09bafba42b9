"""Class names and caption templates for the synthetic fundus task."""
from typing import Optional

from src.numeric.rng import Rng

CAPTION_TEMPLATES: tuple[str, ...] = (
    "a fundus image showing {c}",
    "retinal photograph with signs of {c}",
    "color fundus photo of an eye with {c}",
    "an ophthalmic image presenting {c}",
)

_COUNT_WORDS = ("one", "two", "three", "four", "five", "six", "seven", "eight")


def make_caption(class_name: str, template_id: Optional[int] = None,
                 rng: Optional[Rng] = None) -> str:
    """Fill a caption template with ``class_name``.

    ``template_id`` selects the template; when it is ``None`` the template is
    drawn from ``rng``.
    """
    if not class_name:
        raise ValueError("class_name must be non-empty")
    if template_id is None:
        if rng is None:
            raise ValueError("make_caption needs template_id or rng")
        template_id = rng.bounded(len(CAPTION_TEMPLATES))
    if not 0 <= template_id < len(CAPTION_TEMPLATES):
        raise ValueError(
            f"template_id {template_id} out of range [0, {len(CAPTION_TEMPLATES)})")
    return CAPTION_TEMPLATES[template_id].format(c=class_name)


def synthetic_class_names(n_classes: int) -> list[str]:
    """Class k shows k+1 lesions, bright for even k and dark for odd k."""
    if not 1 <= n_classes <= len(_COUNT_WORDS):
        raise ValueError(f"n_classes must be in [1, {len(_COUNT_WORDS)}], got {n_classes}")
    names = []
    for k in range(n_classes):
        tone = "bright" if k % 2 == 0 else "dark"
        noun = "lesion" if k == 0 else "lesions"
        names.append(f"{_COUNT_WORDS[k]} {tone} {noun}")
    return names
