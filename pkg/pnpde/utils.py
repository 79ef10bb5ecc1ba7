import csv
import hashlib
import json
import platform
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Sequence

import numpy as np
import scipy

FIELD_COLUMNS = ("t", "x", "mean", "std", "truth")


def hash_sha256(dictionary: dict) -> str:
    """Hash dictionaries in a deterministic way.

    :param dictionary: The dictionary to hash
    :return: A hex digest
    """
    # default needed because of tuples of floats and enums
    json_str: str = json.dumps(dictionary, sort_keys=True, default=str)
    return hashlib.sha256(json_str.encode("utf-8")).hexdigest()


def versions() -> Dict[str, str]:
    """Versions of the interpreter and numerical libraries, for reports."""
    from pnpde import __version__  # pylint: disable=import-outside-toplevel

    return {
        "pnpde": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


def write_csv(
    path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]
) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_field_csv(
    path: Path,
    t_nodes: np.ndarray,
    x_nodes: np.ndarray,
    mean: np.ndarray,
    std: np.ndarray,
    truth: Optional[np.ndarray] = None,
) -> None:
    """One row per grid node, time-major. The truth column is empty when
    there is no truth."""
    rows = []
    for i, t in enumerate(t_nodes):
        for j, x in enumerate(x_nodes):
            rows.append(
                (
                    repr(float(t)),
                    repr(float(x)),
                    repr(float(mean[i, j])),
                    repr(float(std[i, j])),
                    "" if truth is None else repr(float(truth[i, j])),
                )
            )
    write_csv(path, FIELD_COLUMNS, rows)


def write_json(path: Path, data: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True, default=_json_default)
        f.write("\n")


def _json_default(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    return str(value)
