"""Child side of the external evaluator protocol.

A training script becomes an evaluator by calling :func:`serve` with a
function from the request document to a validation error::

    from boaug.worker import serve

    def train_and_validate(request):
        policy = request["policy"]          # policy JSON, magnitudes in actual units
        ...
        return error

    serve(train_and_validate)

The child reads one JSON request per line on stdin and answers each with
``{"id": <id>, "error": <real>}`` on stdout, flushing after every line.
"""
from __future__ import annotations

import json
import sys
from typing import Callable, Mapping


def serve(evaluate: Callable[[Mapping], float], stdin=None, stdout=None) -> int:
    """Answer requests until stdin closes; returns the number served."""
    stdin = sys.stdin if stdin is None else stdin
    stdout = sys.stdout if stdout is None else stdout
    served = 0
    for line in stdin:
        if not line.strip():
            continue
        request = json.loads(line)
        error = float(evaluate(request))
        stdout.write(json.dumps({"id": request["id"], "error": error}, separators=(",", ":")) + "\n")
        stdout.flush()
        served += 1
    return served
