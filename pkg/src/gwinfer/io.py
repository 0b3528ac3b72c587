"""JSON helpers for trees, samples and estimates."""

from __future__ import annotations

import json
from pathlib import Path

from .tree import SampleTree, Tree


def tree_from_dict(data: dict) -> Tree:
    """A :class:`SampleTree` when the document carries ``p``, else a :class:`Tree`."""
    if "p" in data:
        return SampleTree.from_dict(data)
    return Tree.from_dict(data)


def read_tree(path) -> Tree:
    with open(path) as fh:
        return tree_from_dict(json.load(fh))


def dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=False) + "\n"


def write_json(obj, path=None) -> str:
    text = dumps(obj.to_dict() if hasattr(obj, "to_dict") else obj)
    if path is not None and str(path) != "-":
        Path(path).write_text(text)
    return text
