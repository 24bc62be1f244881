"""Text front end for the kernel IR.

Grammar (whitespace-insensitive; `//` starts a line comment):

    kernel    := "kernel" IDENT "{" (arraydecl | opdef | item)* "}"
    arraydecl := "array" IDENT ":" SCALAR ("[" INT "]")+ attrs ";"
    attrs     := ("ports=" INT)? ("latency=" INT)? ("storage=" IDENT)?
                 ("partition" "(" "dim=" INT ("," "dim=" INT)* ")")? ("arg")?
    opdef     := "op" IDENT "arity=" INT "latency=" INT ";"
    item      := loop | stmt
    loop      := "for" IDENT "in" INT ".." INT
                 ("pipeline" "(" "ii=" (INT | "?") ")")? ("unroll")? "{" item* "}"
    stmt      := IDENT "=" "load" IDENT index ";"
               | "store" IDENT index "," operand ";"
               | IDENT "=" IDENT "(" operand ("," operand)* ")" ";"
               | IDENT "=" "const" NUMBER ";"
    index     := ("[" affine "]")+
    affine    := ("+"|"-")? term (("+"|"-") term)*   term := INT | IDENT | INT "*" IDENT

Loops are normalized to lower bound 0 on the way in; parse errors carry
line/column positions.
"""

from __future__ import annotations

from dataclasses import dataclass

from .ir import (
    AffineExpr,
    ArrayDecl,
    Kernel,
    KernelError,
    Loop,
    OpDef,
    Stmt,
    validate_kernel,
)

KEYWORDS = {"kernel", "array", "op", "for", "in", "pipeline", "unroll",
            "store", "load", "const", "arg", "partition"}


class ParseError(ValueError):
    def __init__(self, message, line, col):
        super().__init__(f"{line}:{col}: {message}")
        self.line = line
        self.col = col


class ValidationError(ValueError):
    def __init__(self, diagnostics):
        super().__init__("; ".join(str(d) for d in diagnostics))
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class Token:
    kind: str      # ident | int | number | punct
    text: str
    line: int
    col: int


_PUNCT2 = ("..",)
_PUNCT1 = "{}[]();,=*+-?:"


def tokenize(text: str):
    tokens = []
    i, line, col = 0, 1, 1
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if text.startswith("//", i):
            while i < n and text[i] != "\n":
                i += 1
            continue
        start_col = col
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] in "_#"):
                j += 1
            tokens.append(Token("ident", text[i:j], line, start_col))
            col += j - i
            i = j
            continue
        if ch.isdigit():
            j = i
            while j < n and text[j].isdigit():
                j += 1
            # a '.' starts a float only when not the '..' range operator
            if j < n and text[j] == "." and not text.startswith("..", j):
                j += 1
                while j < n and text[j].isdigit():
                    j += 1
                tokens.append(Token("number", text[i:j], line, start_col))
            else:
                tokens.append(Token("int", text[i:j], line, start_col))
            col += j - i
            i = j
            continue
        if text.startswith("..", i):
            tokens.append(Token("punct", "..", line, start_col))
            i += 2
            col += 2
            continue
        if ch in _PUNCT1:
            tokens.append(Token("punct", ch, line, start_col))
            i += 1
            col += 1
            continue
        raise ParseError(f"unexpected character {ch!r}", line, col)
    tokens.append(Token("eof", "", line, col))
    return tokens


class _Parser:
    def __init__(self, text):
        self.toks = tokenize(text)
        self.pos = 0
        self.store_counter = 0

    def peek(self) -> Token:
        return self.toks[self.pos]

    def next(self) -> Token:
        t = self.toks[self.pos]
        self.pos += 1
        return t

    def error(self, message):
        t = self.peek()
        raise ParseError(message, t.line, t.col)

    def expect(self, kind, text=None) -> Token:
        t = self.peek()
        if t.kind != kind or (text is not None and t.text != text):
            want = text or kind
            got = t.text or t.kind
            self.error(f"expected {want!r}, found {got!r}")
        return self.next()

    def accept(self, kind, text=None):
        t = self.peek()
        if t.kind == kind and (text is None or t.text == text):
            return self.next()
        return None

    def expect_int(self) -> int:
        neg = self.accept("punct", "-") is not None
        t = self.expect("int")
        return -int(t.text) if neg else int(t.text)

    def ident(self, what="identifier") -> str:
        t = self.peek()
        if t.kind != "ident":
            self.error(f"expected {what}, found {t.text or t.kind!r}")
        return self.next().text

    # --- grammar ---

    def kernel(self) -> Kernel:
        self.expect("ident", "kernel")
        name = self.ident("kernel name")
        self.expect("punct", "{")
        arrays, opdefs, body = [], [], []
        while not self.accept("punct", "}"):
            t = self.peek()
            if t.kind == "eof":
                self.error("unexpected end of input, missing '}'")
            if t.kind == "ident" and t.text == "array":
                arrays.append(self.arraydecl())
            elif t.kind == "ident" and t.text == "op":
                opdefs.append(self.opdef())
            else:
                body.append(self.item())
        self.expect("eof")
        return Kernel(name, tuple(arrays), tuple(opdefs), tuple(body))

    def arraydecl(self) -> ArrayDecl:
        self.expect("ident", "array")
        name = self.ident("array name")
        self.expect("punct", ":")
        scalar = self.ident("scalar tag")
        dims = []
        while self.accept("punct", "["):
            dims.append(self.expect_int())
            self.expect("punct", "]")
        if not dims:
            self.error("array needs at least one dimension")
        ports, latency, storage = 1, 1, "bram"
        partition, is_arg = (), False
        while True:
            t = self.peek()
            if t.kind != "ident":
                break
            if t.text == "ports":
                self.next(); self.expect("punct", "="); ports = self.expect_int()
            elif t.text == "latency":
                self.next(); self.expect("punct", "="); latency = self.expect_int()
            elif t.text == "storage":
                self.next(); self.expect("punct", "="); storage = self.ident()
            elif t.text == "partition":
                self.next(); self.expect("punct", "(")
                dims_p = []
                while True:
                    self.expect("ident", "dim")
                    self.expect("punct", "=")
                    dims_p.append(self.expect_int())
                    if not self.accept("punct", ","):
                        break
                self.expect("punct", ")")
                partition = tuple(sorted(set(dims_p)))
            elif t.text == "arg":
                self.next(); is_arg = True
            else:
                break
        self.expect("punct", ";")
        return ArrayDecl(name, scalar, tuple(dims), storage, ports, latency,
                         partition, is_arg)

    def opdef(self) -> OpDef:
        self.expect("ident", "op")
        name = self.ident("op name")
        self.expect("ident", "arity")
        self.expect("punct", "=")
        arity = self.expect_int()
        self.expect("ident", "latency")
        self.expect("punct", "=")
        latency = self.expect_int()
        self.expect("punct", ";")
        return OpDef(name, arity, latency)

    def item(self):
        t = self.peek()
        if t.kind == "ident" and t.text == "for":
            return self.loop()
        return self.stmt()

    def loop(self) -> Loop:
        self.expect("ident", "for")
        iv = self.ident("induction variable")
        self.expect("ident", "in")
        lower = self.expect_int()
        self.expect("punct", "..")
        upper = self.expect_int()
        target_ii = None
        unroll = False
        if self.accept("ident", "pipeline"):
            self.expect("punct", "(")
            self.expect("ident", "ii")
            self.expect("punct", "=")
            if self.accept("punct", "?"):
                target_ii = None
            else:
                target_ii = self.expect_int()
            self.expect("punct", ")")
        if self.accept("ident", "unroll"):
            unroll = True
        self.expect("punct", "{")
        body = []
        shift = lower  # normalize to lower bound 0
        while not self.accept("punct", "}"):
            if self.peek().kind == "eof":
                self.error("unexpected end of input, missing '}'")
            body.append(self.item())
        if shift != 0:
            body = [_shift_item(it, iv, shift) for it in body]
        return Loop(iv, 0, upper - lower, target_ii, unroll, tuple(body))

    def stmt(self) -> Stmt:
        t = self.peek()
        if t.kind == "ident" and t.text == "store":
            self.next()
            array = self.ident("array name")
            index = self.index_exprs()
            self.expect("punct", ",")
            value = self.operand()
            self.expect("punct", ";")
            # '#' keeps synthesized ids out of the user namespace
            sid = f"store#{self.store_counter}"
            self.store_counter += 1
            return Stmt(sid, "store", array=array, index=index, operands=(value,))
        sid = self.ident("ssa name")
        if sid in KEYWORDS:
            self.error(f"{sid!r} is a reserved word")
        self.expect("punct", "=")
        t = self.peek()
        if t.kind == "ident" and t.text == "load":
            self.next()
            array = self.ident("array name")
            index = self.index_exprs()
            self.expect("punct", ";")
            return Stmt(sid, "load", array=array, index=index)
        if t.kind == "ident" and t.text == "const":
            self.next()
            neg = self.accept("punct", "-") is not None
            num = self.peek()
            if num.kind not in ("int", "number"):
                self.error("expected a number literal")
            self.next()
            self.expect("punct", ";")
            return Stmt(sid, "const", literal=("-" if neg else "") + num.text)
        opcode = self.ident("opcode")
        self.expect("punct", "(")
        operands = [self.operand()]
        while self.accept("punct", ","):
            operands.append(self.operand())
        self.expect("punct", ")")
        self.expect("punct", ";")
        return Stmt(sid, "compute", opcode=opcode, operands=tuple(operands))

    def operand(self):
        t = self.peek()
        if t.kind == "ident":
            return self.next().text
        neg = self.accept("punct", "-") is not None
        t = self.peek()
        if t.kind == "int":
            self.next()
            return -int(t.text) if neg else int(t.text)
        if t.kind == "number":
            self.next()
            return -float(t.text) if neg else float(t.text)
        self.error("expected an operand (ssa name or literal)")

    def index_exprs(self) -> tuple:
        exprs = []
        while self.accept("punct", "["):
            exprs.append(self.affine())
            self.expect("punct", "]")
        if not exprs:
            self.error("expected at least one [index]")
        return tuple(exprs)

    def affine(self) -> AffineExpr:
        pairs = []
        const = 0
        sign = 1
        if self.accept("punct", "-"):
            sign = -1
        elif self.accept("punct", "+"):
            sign = 1
        while True:
            t = self.peek()
            if t.kind == "int":
                self.next()
                value = int(t.text)
                if self.accept("punct", "*"):
                    iv = self.ident("induction variable")
                    pairs.append((iv, sign * value))
                else:
                    const += sign * value
            elif t.kind == "ident":
                self.next()
                pairs.append((t.text, sign))
            else:
                self.error("expected an affine term")
            if self.accept("punct", "+"):
                sign = 1
            elif self.accept("punct", "-"):
                sign = -1
            else:
                break
        return AffineExpr.build(pairs, const)


def _shift_item(item, iv, shift):
    """Rewrite accesses for loop normalization: iv_source = iv_norm + shift."""
    from dataclasses import replace
    if isinstance(item, Loop):
        return replace(item, body=tuple(_shift_item(it, iv, shift) for it in item.body))
    return replace(item, index=tuple(e.shift_iv(iv, shift) for e in item.index))


def parse_kernel(text: str) -> Kernel:
    """Parse and validate kernel source. Raises ParseError on syntax errors
    and ValidationError when the parsed kernel breaks an IR invariant."""
    kernel = _Parser(text).kernel()
    diags = validate_kernel(kernel)
    if diags:
        raise ValidationError(diags)
    return kernel
