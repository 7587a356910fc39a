"""Emotion label vocabulary.

The four kept classes are ordered as in the confusion-matrix tables:
Neutral, Happiness, Sadness, Anger.
"""

CLASSES = ("Neutral", "Happiness", "Sadness", "Anger")
N_CLASSES = len(CLASSES)

# The ten annotation categories of the source corpus, with their usual
# three-letter codes. Anything mapped to None is recognised but not kept.
_ALIASES = {
    "neutral": "Neutral",
    "neu": "Neutral",
    "happiness": "Happiness",
    "happy": "Happiness",
    "hap": "Happiness",
    "sadness": "Sadness",
    "sad": "Sadness",
    "anger": "Anger",
    "angry": "Anger",
    "ang": "Anger",
    "surprise": None,
    "sur": None,
    "fear": None,
    "fea": None,
    "frustration": None,
    "fru": None,
    "excited": None,
    "exc": None,
    "disgust": None,
    "dis": None,
    "other": None,
    "oth": None,
    "xxx": None,
}


def normalize_label(raw):
    """Map a raw label string to a kept class name, or None if excluded.

    Raises KeyError for strings outside the annotation vocabulary.
    """
    return _ALIASES[raw.strip().lower()]


def label_index(name):
    return CLASSES.index(name)
