"""Coefficient matrices with expression-valued entries.

Entries of the block matrix A(xi) = [[A11, A12], [A12^T, A22]] are small
arithmetic expressions in the cross-section variables xi1..xip.  This module
parses them, evaluates them in bulk at quadrature points, verifies symmetry /
ellipticity / boundedness by sampling, and builds the two derived matrices the
eigenvalue studies need: the direction-reduced (1+p) x (1+p) matrix and the
rotation-conjugated matrix for slab problems.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._jacobi import symmetric_eigvals
from .geometry import CrossSectionSpec, Direction


class ExprError(ValueError):
    """Parse or evaluation failure; carries a byte offset when parsing."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class CoefficientError(ValueError):
    pass


# ---------------------------------------------------------------------------
# expression AST


@dataclass(frozen=True)
class Const:
    value: float

    def evaluate(self, xi: np.ndarray) -> np.ndarray:
        return np.full(xi.shape[0], self.value)


@dataclass(frozen=True)
class Var:
    index: int  # 0-based; "xi1" is index 0

    def evaluate(self, xi: np.ndarray) -> np.ndarray:
        return xi[:, self.index]


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / ^
    left: "ExprAst"
    right: "ExprAst"

    def evaluate(self, xi: np.ndarray) -> np.ndarray:
        a = self.left.evaluate(xi)
        b = self.right.evaluate(xi)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        if self.op == "/":
            if np.any(b == 0.0):
                raise ExprError("division by zero during evaluation")
            return a / b
        if self.op == "^":
            return a**b
        raise ExprError(f"unknown operator {self.op!r}")


@dataclass(frozen=True)
class Neg:
    arg: "ExprAst"

    def evaluate(self, xi: np.ndarray) -> np.ndarray:
        return -self.arg.evaluate(xi)


@dataclass(frozen=True)
class Call:
    fn: str  # sin, cos, exp
    arg: "ExprAst"

    def evaluate(self, xi: np.ndarray) -> np.ndarray:
        v = self.arg.evaluate(xi)
        return _FUNCTIONS[self.fn](v)


ExprAst = Const | Var | BinOp | Neg | Call

_FUNCTIONS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}


# ---------------------------------------------------------------------------
# tokenizer / recursive-descent parser

_TOKEN_OPS = set("+-*/^()")


def _tokenize(src: str) -> list[tuple[str, str | float, int]]:
    tokens = []
    i, n = 0, len(src)
    while i < n:
        ch = src[i]
        if ch.isspace():
            i += 1
            continue
        if ch in _TOKEN_OPS:
            tokens.append(("op", ch, i))
            i += 1
            continue
        if ch.isdigit() or ch == ".":
            j = i
            seen_e = False
            while j < n:
                c = src[j]
                if c.isdigit() or c == ".":
                    j += 1
                elif c in "eE" and not seen_e and j + 1 < n and (
                    src[j + 1].isdigit() or src[j + 1] in "+-"
                ):
                    seen_e = True
                    j += 2 if src[j + 1] in "+-" else 1
                else:
                    break
            try:
                value = float(src[i:j])
            except ValueError:
                raise ExprError(f"malformed number {src[i:j]!r}", i) from None
            tokens.append(("num", value, i))
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (src[j].isalnum() or src[j] == "_"):
                j += 1
            tokens.append(("name", src[i:j], i))
            i = j
            continue
        raise ExprError(f"unexpected character {ch!r}", i)
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    """expr := term (('+'|'-') term)*
    term := unary (('*'|'/') unary)*
    unary := '-' unary | power
    power := atom ('^' unary)?          (right-associative)
    atom := number | name '(' expr ')' | xi_k | '(' expr ')'
    """

    def __init__(self, src: str):
        self.src = src
        self.tokens = _tokenize(src)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, op: str):
        kind, val, off = self.peek()
        if kind != "op" or val != op:
            raise ExprError(f"expected {op!r}", off)
        return self.advance()

    def parse(self) -> ExprAst:
        node = self.expr()
        kind, val, off = self.peek()
        if kind != "end":
            raise ExprError(f"unexpected trailing input {val!r}", off)
        return node

    def expr(self) -> ExprAst:
        node = self.term()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.advance()
                node = BinOp(val, node, self.term())
            else:
                return node

    def term(self) -> ExprAst:
        node = self.unary()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "*/":
                self.advance()
                node = BinOp(val, node, self.unary())
            else:
                return node

    def unary(self) -> ExprAst:
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self) -> ExprAst:
        node = self.atom()
        kind, val, _ = self.peek()
        if kind == "op" and val == "^":
            self.advance()
            return BinOp("^", node, self.unary())
        return node

    def atom(self) -> ExprAst:
        kind, val, off = self.advance()
        if kind == "num":
            return Const(float(val))
        if kind == "name":
            if val in _FUNCTIONS:
                nkind, nval, noff = self.peek()
                if nkind != "op" or nval != "(":
                    raise ExprError(f"function {val!r} needs an argument list", noff)
                self.advance()
                arg = self.expr()
                self.expect_op(")")
                return Call(val, arg)
            if val.startswith("xi"):
                suffix = val[2:]
                if suffix.isdigit() and int(suffix) >= 1:
                    nkind, nval, noff = self.peek()
                    if nkind == "op" and nval == "(":
                        raise ExprError(f"variable {val!r} is not callable", noff)
                    return Var(int(suffix) - 1)
            raise ExprError(f"unknown identifier {val!r}", off)
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        raise ExprError(f"unexpected token {val!r}", off)


def parse_expr(src: str) -> ExprAst:
    """Parse an infix expression over xi1..xip into an AST.

    Supported: numbers, variables ``xi1``, ``xi2``, ..., the operators
    ``+ - * / ^`` with standard precedence (``^`` right-associative, binding
    tighter than unary minus), and the functions ``sin``, ``cos``, ``exp``.
    """
    if not isinstance(src, str):
        raise ExprError(f"expression must be a string, got {type(src).__name__}")
    return _Parser(src).parse()


# precedence table for the printer: higher binds tighter
_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4, "atom": 5}


def _prec(node: ExprAst) -> int:
    if isinstance(node, BinOp):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return _PREC["neg"]
    if isinstance(node, Const) and node.value < 0:
        return _PREC["neg"]  # prints with a leading '-', same binding as Neg
    return _PREC["atom"]


def format_expr(node: ExprAst) -> str:
    """Pretty-print an AST; the output reparses to an equivalent AST."""
    if isinstance(node, Const):
        return repr(node.value)
    if isinstance(node, Var):
        return f"xi{node.index + 1}"
    if isinstance(node, Neg):
        inner = format_expr(node.arg)
        if _prec(node.arg) < _PREC["neg"]:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(node, Call):
        return f"{node.fn}({format_expr(node.arg)})"
    if isinstance(node, BinOp):
        lp, rp = _prec(node.left), _prec(node.right)
        me = _PREC[node.op]
        left = format_expr(node.left)
        right = format_expr(node.right)
        # '-' and '/' are left-associative; '^' is right-associative
        if lp < me or (node.op == "^" and lp == me):
            left = f"({left})"
        if rp < me or (node.op in "-/" and rp == me):
            right = f"({right})"
        return f"{left} {node.op} {right}" if node.op in "+-" else f"{left}{node.op}{right}"
    raise ExprError(f"cannot format {node!r}")


def max_var_index(node: ExprAst) -> int:
    """Largest variable index used (1-based); 0 for constant expressions."""
    if isinstance(node, Var):
        return node.index + 1
    if isinstance(node, BinOp):
        return max(max_var_index(node.left), max_var_index(node.right))
    if isinstance(node, (Neg, Call)):
        return max_var_index(node.arg)
    return 0


def _const_value(node: ExprAst) -> float | None:
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Neg):
        v = _const_value(node.arg)
        return None if v is None else -v
    return None


def scaled_sum(terms: list[tuple[float, ExprAst]]) -> ExprAst:
    """Symbolic sum of c_i * expr_i with constant folding.

    Exact-zero coefficients drop out; constant sub-expressions multiply
    through; an empty surviving sum is the constant 0.
    """
    folded_const = 0.0
    symbolic: list[ExprAst] = []
    for c, node in terms:
        if c == 0.0:
            continue
        v = _const_value(node)
        if v is not None:
            folded_const += c * v
        elif c == 1.0:
            symbolic.append(node)
        else:
            symbolic.append(BinOp("*", Const(c), node))
    parts = list(symbolic)
    if folded_const != 0.0 or not parts:
        parts.append(Const(folded_const))
    out = parts[0]
    for p in parts[1:]:
        out = BinOp("+", out, p)
    return out


# ---------------------------------------------------------------------------
# coefficient field


class CoefficientField:
    """Symmetric (m+p) x (m+p) matrix of expressions in xi1..xip.

    ``m`` counts base coordinates, ``p`` cross-section coordinates; entries may
    reference only the cross-section variables.  Block views: ``A11`` is the
    leading m x m block, ``A12`` the m x p coupling block, ``A22`` the trailing
    p x p block.
    """

    def __init__(self, m: int, p: int, entries: list[list[ExprAst]]):
        if m < 0 or p < 1:
            raise CoefficientError(f"need m >= 0 and p >= 1, got m={m}, p={p}")
        d = m + p
        if len(entries) != d or any(len(row) != d for row in entries):
            raise CoefficientError(f"entries must form a {d}x{d} grid")
        for row in entries:
            for node in row:
                k = max_var_index(node)
                if k > p:
                    raise CoefficientError(
                        f"entry references xi{k} but the cross-section has p={p}"
                    )
        self.m = m
        self.p = p
        self.entries = [list(row) for row in entries]

    @property
    def dim(self) -> int:
        return self.m + self.p

    @classmethod
    def from_strings(cls, m: int, entries: list[list[str]]) -> "CoefficientField":
        d = len(entries)
        return cls(m, d - m, [[parse_expr(s) for s in row] for row in entries])

    @classmethod
    def identity(cls, m: int, p: int) -> "CoefficientField":
        d = m + p
        return cls(
            m, p, [[Const(1.0 if i == j else 0.0) for j in range(d)] for i in range(d)]
        )

    @classmethod
    def constant(cls, m: int, matrix) -> "CoefficientField":
        mat = np.asarray(matrix, dtype=float)
        d = mat.shape[0]
        if mat.shape != (d, d):
            raise CoefficientError("constant coefficient must be square")
        return cls(m, d - m, [[Const(float(mat[i, j])) for j in range(d)] for i in range(d)])

    def entry_strings(self) -> list[list[str]]:
        return [[format_expr(e) for e in row] for row in self.entries]

    def is_constant(self) -> bool:
        return all(_const_value(e) is not None for row in self.entries for e in row)

    def constant_matrix(self) -> np.ndarray:
        """The matrix value when every entry is constant; error otherwise."""
        vals = np.empty((self.dim, self.dim))
        for i, row in enumerate(self.entries):
            for j, e in enumerate(row):
                v = _const_value(e)
                if v is None:
                    raise CoefficientError("coefficient is not constant")
                vals[i, j] = v
        return vals

    def evaluate(self, xi_points: np.ndarray) -> np.ndarray:
        """Evaluate A at sample points: (npts, p) -> (npts, d, d)."""
        xi = np.asarray(xi_points, dtype=float)
        if xi.ndim == 1:
            xi = xi[:, None]
        if xi.shape[1] != self.p:
            raise CoefficientError(
                f"sample points have {xi.shape[1]} columns, expected p={self.p}"
            )
        npts = xi.shape[0]
        out = np.empty((npts, self.dim, self.dim))
        for i, row in enumerate(self.entries):
            for j, e in enumerate(row):
                vals = e.evaluate(xi)
                if not np.all(np.isfinite(vals)):
                    raise CoefficientError(
                        f"entry ({i},{j}) evaluated to a non-finite value"
                    )
                out[:, i, j] = vals
        return out

    def block(self, rows: slice, cols: slice) -> list[list[ExprAst]]:
        return [row[cols] for row in self.entries[rows]]

    @property
    def A11(self) -> list[list[ExprAst]]:
        return self.block(slice(0, self.m), slice(0, self.m))

    @property
    def A12(self) -> list[list[ExprAst]]:
        return self.block(slice(0, self.m), slice(self.m, self.dim))

    @property
    def A22(self) -> list[list[ExprAst]]:
        return self.block(slice(self.m, self.dim), slice(self.m, self.dim))

    def cross_section_field(self) -> "CoefficientField":
        """The p x p trailing block as a standalone field (m = 0)."""
        return CoefficientField(0, self.p, self.A22)

    def __repr__(self):
        return f"CoefficientField(m={self.m}, p={self.p}, entries={self.entry_strings()!r})"


class ReducedCoefficient(CoefficientField):
    """(1+p) x (1+p) field obtained by reducing along a direction."""

    def __init__(self, p: int, entries, nu: Direction):
        super().__init__(1, p, entries)
        self.nu = nu


def reduce_direction(A: CoefficientField, nu: Direction) -> ReducedCoefficient:
    """Collapse the base block along a unit direction.

    The reduced matrix is [[nu.A11.nu, nu^T A12], [(nu^T A12)^T, A22]]; for
    constant A it is constant, in general entries are symbolic linear
    combinations of the originals.  Ellipticity survives with the same lower
    bound because the reduction is a compression onto span(nu) + cross space.
    """
    if nu.m != A.m:
        raise CoefficientError(f"direction has m={nu.m}, coefficient has m={A.m}")
    v = nu.array
    p, m = A.p, A.m
    top_left = scaled_sum(
        [(v[i] * v[j], A.entries[i][j]) for i in range(m) for j in range(m)]
    )
    top_right = [
        scaled_sum([(v[i], A.entries[i][m + jj]) for i in range(m)]) for jj in range(p)
    ]
    entries: list[list[ExprAst]] = [[top_left] + top_right]
    for ii in range(p):
        row = [
            scaled_sum([(v[j], A.entries[m + ii][j]) for j in range(m)])
        ]
        row.extend(A.entries[m + ii][m + jj] for jj in range(p))
        entries.append(row)
    return ReducedCoefficient(p, entries, nu)


def conjugate_rotation(A: CoefficientField, B) -> CoefficientField:
    """Conjugate the base block by an orthogonal matrix B.

    Returns the field [[B A11 B^T, B A12], [(B A12)^T, A22]]; the spectrum at
    every sample point is preserved because this is conjugation by the
    block-diagonal orthogonal matrix diag(B, I).
    """
    B = np.asarray(B, dtype=float)
    m, p = A.m, A.p
    if B.shape != (m, m):
        raise CoefficientError(f"rotation must be {m}x{m}")
    if not np.allclose(B.T @ B, np.eye(m), rtol=0.0, atol=1e-12):
        raise CoefficientError("rotation matrix is not orthogonal (1e-12)")
    d = m + p
    entries: list[list[ExprAst]] = [[None] * d for _ in range(d)]
    for i in range(m):
        for j in range(m):
            entries[i][j] = scaled_sum(
                [
                    (B[i, a] * B[j, b], A.entries[a][b])
                    for a in range(m)
                    for b in range(m)
                ]
            )
    for i in range(m):
        for jj in range(p):
            e = scaled_sum([(B[i, a], A.entries[a][m + jj]) for a in range(m)])
            entries[i][m + jj] = e
            entries[m + jj][i] = e
    for ii in range(p):
        for jj in range(p):
            entries[m + ii][m + jj] = A.entries[m + ii][m + jj]
    return CoefficientField(m, p, entries)


def cross_sample_grid(cross: CrossSectionSpec, grid_n: int) -> np.ndarray:
    """Tensor sample grid over the cross-section, endpoints included."""
    axes = [np.linspace(a, b, grid_n) for a, b in cross.intervals]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([g.ravel() for g in grids])


def verify_ellipticity(
    A: CoefficientField, cross: CrossSectionSpec, grid_n: int = 64
) -> tuple[float, float]:
    """Sampled ellipticity and boundedness constants of A over the cross-section.

    Returns ``(c_A_est, C_A_est)``: the minimum eigenvalue and maximum spectral
    norm of A(xi) over a tensor grid with ``grid_n`` points per xi-direction.
    Symmetry is checked pointwise first.

    Raises
    ------
    CoefficientError
        If A is non-symmetric at a sample point or c_A_est <= 0.
    """
    if grid_n < 2:
        raise CoefficientError("grid_n must be at least 2")
    if cross.p != A.p:
        raise CoefficientError(f"cross-section p={cross.p} but coefficient p={A.p}")
    pts = cross_sample_grid(cross, grid_n)
    vals = A.evaluate(pts)
    scale = max(1.0, float(np.abs(vals).max()))
    asym = np.abs(vals - vals.transpose(0, 2, 1)).max(axis=(1, 2))
    worst = int(np.argmax(asym))
    if asym[worst] > 1e-12 * scale:
        raise CoefficientError(
            f"non-symmetric A at sample point {pts[worst].tolist()} "
            f"(asymmetry {asym[worst]:.3e})"
        )
    if A.is_constant():
        eigs = symmetric_eigvals(vals[0])
        c_est, big = float(eigs[0]), float(max(abs(eigs[0]), abs(eigs[-1])))
    else:
        c_est, big = math.inf, 0.0
        for k in range(vals.shape[0]):
            eigs = symmetric_eigvals(vals[k])
            c_est = min(c_est, float(eigs[0]))
            big = max(big, float(abs(eigs[0])), float(abs(eigs[-1])))
    if c_est <= 0.0:
        raise CoefficientError(
            f"not elliptic on sample grid (smallest eigenvalue {c_est:.6g})"
        )
    return c_est, big
