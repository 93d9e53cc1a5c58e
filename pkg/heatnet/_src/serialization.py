import json
import pickle
from pathlib import Path

import numpy as np


def pickle_save(obj, filename, protocol=5):
    # Check if 'filename' is a path-like or a file-like object
    if hasattr(filename, "write"):
        pickle.dump(obj, filename, protocol=protocol)
    else:
        # Create the folder structure, if it does not exist
        filename = Path(filename)
        filename.parent.mkdir(exist_ok=True, parents=True)
        with open(filename, "+wb") as outfile:
            pickle.dump(obj, outfile, protocol=protocol)


def pickle_load(base_cls, filename):
    if hasattr(filename, "read"):
        restored_obj = pickle.load(filename)
    else:
        with open(filename, "+rb") as infile:
            restored_obj = pickle.load(infile)
    assert type(restored_obj) == base_cls
    return restored_obj


def _to_builtin(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def dumps_json(obj) -> str:
    # Fixed indentation and key order keep re-exports byte-identical
    return json.dumps(obj, indent=2, allow_nan=True, default=_to_builtin) + "\n"


def write_json(obj, filename):
    text = dumps_json(obj)
    if hasattr(filename, "write"):
        filename.write(text)
    else:
        filename = Path(filename)
        filename.parent.mkdir(exist_ok=True, parents=True)
        filename.write_text(text)


def read_json(filename):
    if hasattr(filename, "read"):
        return json.load(filename)
    with open(filename, "r") as infile:
        return json.load(infile)


def write_jsonl(rows, filename):
    filename = Path(filename)
    filename.parent.mkdir(exist_ok=True, parents=True)
    with open(filename, "w") as outfile:
        for row in rows:
            outfile.write(json.dumps(row, default=_to_builtin) + "\n")
