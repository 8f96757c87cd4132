"""Versioned JSON solution files.

Phases are written in the flat parameter layout documented in
:mod:`timebin_mub.optimize`, as shortest round-trip decimals, so a
write/read cycle reproduces every phase bit for bit.
"""

import json
import math

import numpy as np

from .cascade import DeviceSpec
from .optimize import SolutionSet, pack_params, unpack_params

FORMAT_NAME = "timebin-mub-solution"
FORMAT_VERSION = 1
PARAM_LAYOUT = "fbg[N][S] + eom[N][d+1][S]"

# in-memory only; would break byte-identical reruns
_VOLATILE_METADATA = ("wall_time",)


class SolutionFormatError(ValueError):
    """File is not a readable solution of a supported version."""


def solution_to_json(solution: SolutionSet) -> str:
    metadata = {k: v for k, v in solution.metadata.items() if k not in _VOLATILE_METADATA}
    doc = {
        "format": FORMAT_NAME,
        "format_version": FORMAT_VERSION,
        "spec": solution.spec.to_dict(),
        "convention": solution.convention,
        "achieved_mse": float(solution.achieved_mse),
        "seed": metadata.get("seed"),
        "param_layout": PARAM_LAYOUT,
        "params": [float(x) for x in pack_params(solution.fbg, solution.eom)],
        "metadata": metadata,
    }
    return json.dumps(doc, indent=1, allow_nan=False) + "\n"


def solution_from_json(text: str) -> SolutionSet:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SolutionFormatError(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
        raise SolutionFormatError("missing or unknown 'format' field")
    if doc.get("format_version") != FORMAT_VERSION:
        raise SolutionFormatError(
            f"unsupported format_version {doc.get('format_version')!r}, expected {FORMAT_VERSION}"
        )
    try:
        spec = DeviceSpec(**doc["spec"])
        params = np.array(doc["params"], dtype=float)
        fbg, eom = unpack_params(spec, params)
        achieved = float(doc["achieved_mse"])
        solution = SolutionSet(
            spec, fbg.copy(), eom.copy(), achieved,
            dict(doc.get("metadata", {})), doc.get("convention", "rows"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SolutionFormatError(f"malformed solution: {exc}") from exc
    if not math.isfinite(achieved) or achieved < 0:
        raise SolutionFormatError(f"achieved_mse must be finite and nonnegative, got {achieved}")
    return solution


def save_solution(solution: SolutionSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(solution_to_json(solution))


def load_solution(path) -> SolutionSet:
    with open(path, encoding="utf-8") as fh:
        return solution_from_json(fh.read())
