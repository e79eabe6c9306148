"""Optional iteration traces and SDP dumps written under TRACE_DIR."""

import os

import numpy as np
from loguru import logger

from src.config import settings


def trace_path(name, directory=None):
    directory = directory or settings.TRACE_DIR
    if not os.path.exists(directory):
        os.makedirs(directory)
    return os.path.join(directory, name)


def write_trace(name, rows, header, directory=None):
    """
    Write an iteration trace as CSV.

    Args:
        name: File name inside the trace directory
        rows: Sequence of equal-length numeric tuples
        header: Comma separated column names

    Returns:
        The written path
    """
    path = trace_path(name, directory)
    data = np.asarray(rows, dtype=float).reshape(len(rows), -1) if rows else np.zeros((0, header.count(",") + 1))
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.12g")
    logger.debug(f"Trace written to {path}")
    return path


def dump_sdp(problem, path):
    """
    Write an SdpProblem as (block, row, col, value) lines.

    Row 0 holds the objective, constraint i is row i + 1, matching the SDPA sparse
    convention with 1-based indices. Only the upper triangle of PSD blocks is written.
    """
    lines = [f"{problem.m}", f"{len(problem.blocks)}"]
    lines.append(" ".join(str(b.size if b.kind == "psd" else -b.size) for b in problem.blocks))
    lines.append(" ".join(f"{v:.16g}" for v in problem.b))

    for b, block in enumerate(problem.blocks):
        matrices = [(0, problem.C[b])]
        A = problem.A[b].tocsr()
        matrices += [(i + 1, A.getrow(i).toarray().ravel()) for i in range(problem.m)]
        for row, vec in matrices:
            for pos in np.flatnonzero(vec):
                if block.kind == "psd":
                    i, j = divmod(int(pos), block.size)
                    if i > j:
                        continue
                else:
                    i = j = int(pos)
                lines.append(f"{row} {b + 1} {i + 1} {j + 1} {vec[pos]:.16g}")

    with open(path, "w", encoding="utf-8") as handle:
        handle.write("\n".join(lines) + "\n")
    logger.info(f"SDP dumped to {path} ({problem.m} rows, {len(problem.blocks)} blocks)")
    return path
