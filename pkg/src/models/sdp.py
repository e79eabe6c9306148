from typing import Dict, Any, Optional, List

import numpy as np
import scipy.sparse as sp

from src.utils.errors import InconsistentDimensions


SDP_STATUSES = ("optimal", "near_optimal", "infeasible_certificate", "unbounded_certificate", "numerical_failure")
BLOCK_KINDS = ("psd", "nonneg")


class SdpBlock:
    """One cone block: a symmetric PSD matrix or a nonnegative vector."""

    def __init__(self, name: str, size: int, kind: str = "psd"):
        if kind not in BLOCK_KINDS:
            raise ValueError(f"Unknown block kind: {kind}")
        if size < 1:
            raise InconsistentDimensions(f"Block '{name}' must have size >= 1")
        self.name = name
        self.size = size
        self.kind = kind

    @property
    def width(self) -> int:
        """Length of the vectorized block."""
        return self.size * self.size if self.kind == "psd" else self.size

    def __repr__(self) -> str:
        return f"SdpBlock({self.name}, {self.kind}, {self.size})"


class SdpProblem:
    """
    Standard-form SDP:

        min  sum_b <C_b, X_b>
        s.t. sum_b <A_ib, X_b> = b_i,   X_b PSD (or >= 0 for nonneg blocks)

    Entries are accumulated through add_* calls; an entry (i, j, v) on a PSD block
    contributes v * X_ij to the row, for i != j as well.
    """

    def __init__(self):
        self.blocks: List[SdpBlock] = []
        self.rhs: List[float] = []
        self.row_names: List[str] = []
        self._entries: Dict[int, List[tuple]] = {}
        self._objective: Dict[int, List[tuple]] = {}
        self._frozen = None

    @property
    def m(self) -> int:
        return len(self.rhs)

    def add_block(self, name: str, size: int, kind: str = "psd") -> int:
        self.blocks.append(SdpBlock(name, size, kind))
        self._entries[len(self.blocks) - 1] = []
        self._objective[len(self.blocks) - 1] = []
        self._frozen = None
        return len(self.blocks) - 1

    def block_index(self, name: str) -> int:
        for b, block in enumerate(self.blocks):
            if block.name == name:
                return b
        raise KeyError(name)

    def add_row(self, rhs: float, name: str = "") -> int:
        self.rhs.append(float(rhs))
        self.row_names.append(name or f"row{len(self.rhs) - 1}")
        self._frozen = None
        return len(self.rhs) - 1

    def _position(self, block: int, i: int, j: Optional[int]):
        blk = self.blocks[block]
        if blk.kind == "nonneg":
            if j not in (None, i) or not 0 <= i < blk.size:
                raise InconsistentDimensions(f"Bad entry ({i}, {j}) for block '{blk.name}'")
            return [(i, 1.0)]
        if not (0 <= i < blk.size and 0 <= j < blk.size):
            raise InconsistentDimensions(f"Entry ({i}, {j}) outside block '{blk.name}'")
        if i == j:
            return [(i * blk.size + i, 1.0)]
        return [(i * blk.size + j, 0.5), (j * blk.size + i, 0.5)]

    def add_entry(self, row: int, block: int, i: int, j: Optional[int] = None, value: float = 1.0):
        for pos, weight in self._position(block, i, j):
            self._entries[block].append((row, pos, weight * value))
        self._frozen = None

    def add_matrix(self, row: int, block: int, M, index=None, scale: float = 1.0):
        """Add scale * <M, X[index, index]> to a row; M must be symmetric."""
        M = sp.coo_matrix(M)
        index = np.arange(M.shape[0]) if index is None else np.asarray(index)
        size = self.blocks[block].size
        for r, c, v in zip(index[M.row], index[M.col], M.data):
            self._entries[block].append((row, r * size + c, scale * v))
        self._frozen = None

    def add_objective(self, block: int, i: int, j: Optional[int] = None, value: float = 1.0):
        for pos, weight in self._position(block, i, j):
            self._objective[block].append((pos, weight * value))
        self._frozen = None

    def _freeze(self):
        A, C = [], []
        for b, block in enumerate(self.blocks):
            entries = self._entries[b]
            data = np.array(entries, dtype=float).reshape(-1, 3)
            A.append(sp.csr_matrix(
                (data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))),
                shape=(self.m, block.width)
            ))
            obj = self._objective[b]
            c = np.zeros(block.width)
            for pos, value in obj:
                c[pos] += value
            C.append(c)
        self._frozen = (A, C)

    @property
    def A(self) -> List[sp.csr_matrix]:
        """Per block, the m x width matrix of vectorized constraint coefficients."""
        if self._frozen is None:
            self._freeze()
        return self._frozen[0]

    @property
    def C(self) -> List[np.ndarray]:
        if self._frozen is None:
            self._freeze()
        return self._frozen[1]

    @property
    def b(self) -> np.ndarray:
        return np.array(self.rhs, dtype=float)

    def block_matrix(self, block: int, vec) -> np.ndarray:
        blk = self.blocks[block]
        vec = np.asarray(vec, dtype=float)
        return vec.reshape(blk.size, blk.size) if blk.kind == "psd" else vec

    def __repr__(self) -> str:
        sizes = ", ".join(f"{b.name}:{b.kind}{b.size}" for b in self.blocks[:4])
        more = "" if len(self.blocks) <= 4 else f", ... ({len(self.blocks)} blocks)"
        return f"SdpProblem(rows={self.m}, blocks=[{sizes}{more}])"


class SdpSolution:
    """Primal-dual pair returned by the interior-point solver."""

    def __init__(
        self,
        status: str,
        X: List[np.ndarray],
        y,
        Z: List[np.ndarray],
        primal_objective: float,
        dual_objective: float,
        gap: float,
        iterations: int = 0,
        primal_residual: float = float("nan"),
        dual_residual: float = float("nan"),
        removed_rows: Optional[List[int]] = None
    ):
        self.status = status
        self.X = X
        self.y = np.asarray(y, dtype=float)
        self.Z = Z
        self.primal_objective = primal_objective
        self.dual_objective = dual_objective
        self.gap = gap
        self.iterations = iterations
        self.primal_residual = primal_residual
        self.dual_residual = dual_residual
        self.removed_rows = removed_rows or []

    @property
    def solved(self) -> bool:
        return self.status in ("optimal", "near_optimal")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "status": self.status,
            "primal_objective": self.primal_objective,
            "dual_objective": self.dual_objective,
            "gap": self.gap,
            "iterations": self.iterations,
            "primal_residual": self.primal_residual,
            "dual_residual": self.dual_residual,
            "removed_rows": list(self.removed_rows)
        }

    def __repr__(self) -> str:
        return (
            f"SdpSolution(status={self.status}, primal={self.primal_objective:.8g}, "
            f"dual={self.dual_objective:.8g}, gap={self.gap:.2e}, iterations={self.iterations})"
        )
