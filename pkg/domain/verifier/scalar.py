"""标量区间：同时维护有符号与无符号两组边界，并互相收紧。

所有运算只保证包含关系（sound），不追求最紧。
"""

from dataclasses import dataclass

from domain.isa import opcodes as op
from domain.isa import alu, jmp_taken, to_s64
from domain.isa.types import S64_MAX, S64_MIN, U32_MAX, U64_MAX

_FULL_U = (0, U64_MAX)
_FULL_S = (S64_MIN, S64_MAX)


@dataclass(frozen=True, slots=True)
class Bounds:
    smin: int = S64_MIN
    smax: int = S64_MAX
    umin: int = 0
    umax: int = U64_MAX

    @classmethod
    def unknown(cls) -> "Bounds":
        return cls()

    @classmethod
    def const(cls, value: int) -> "Bounds":
        value &= U64_MAX
        s = to_s64(value)
        return cls(s, s, value, value)

    @classmethod
    def unsigned(cls, lo: int, hi: int) -> "Bounds":
        return cls(S64_MIN, S64_MAX, lo, hi).synced() or cls()

    @classmethod
    def signed(cls, lo: int, hi: int) -> "Bounds":
        return cls(lo, hi, 0, U64_MAX).synced() or cls()

    @classmethod
    def of_width(cls, nbytes: int) -> "Bounds":
        if nbytes >= 8:
            return cls()
        return cls.unsigned(0, (1 << (8 * nbytes)) - 1)

    @property
    def is_const(self) -> bool:
        return self.umin == self.umax

    def contains(self, value: int) -> bool:
        value &= U64_MAX
        return self.umin <= value <= self.umax and self.smin <= to_s64(value) <= self.smax

    def synced(self) -> "Bounds | None":
        """两组边界互相推导后取交集；区间为空（该路径不可行）时返回 None。"""
        smin, smax, umin, umax = self.smin, self.smax, self.umin, self.umax
        for _ in range(2):
            if smin > smax or umin > umax:
                return None
            if umax <= S64_MAX:
                lo, hi = umin, umax
            elif umin > S64_MAX:
                lo, hi = to_s64(umin), to_s64(umax)
            else:
                lo, hi = _FULL_S
            smin, smax = max(smin, lo), min(smax, hi)
            if smin > smax:
                return None
            if smin >= 0:
                lo, hi = smin, smax
            elif smax < 0:
                lo, hi = smin & U64_MAX, smax & U64_MAX
            else:
                lo, hi = _FULL_U
            umin, umax = max(umin, lo), min(umax, hi)
        if smin > smax or umin > umax:
            return None
        return Bounds(smin, smax, umin, umax)

    def __str__(self) -> str:
        if self.is_const:
            return f"{self.umin}"
        return f"s[{self.smin},{self.smax}] u[{self.umin},{self.umax}]"


def _make(s: tuple[int, int], u: tuple[int, int]) -> Bounds:
    return Bounds(s[0], s[1], u[0], u[1]).synced() or Bounds()


def _s(lo: int, hi: int) -> tuple[int, int]:
    if lo < S64_MIN or hi > S64_MAX:
        return _FULL_S
    return lo, hi


def _add(a: Bounds, b: Bounds) -> Bounds:
    lo, hi = a.umin + b.umin, a.umax + b.umax
    if hi <= U64_MAX:
        u = (lo, hi)
    elif lo > U64_MAX:
        u = (lo - (1 << 64), hi - (1 << 64))
    else:
        u = _FULL_U
    return _make(_s(a.smin + b.smin, a.smax + b.smax), u)


def _sub(a: Bounds, b: Bounds) -> Bounds:
    lo, hi = a.umin - b.umax, a.umax - b.umin
    if lo >= 0:
        u = (lo, hi)
    elif hi < 0:
        u = (lo + (1 << 64), hi + (1 << 64))
    else:
        u = _FULL_U
    return _make(_s(a.smin - b.smax, a.smax - b.smin), u)


def _mul(a: Bounds, b: Bounds) -> Bounds:
    u = (a.umin * b.umin, a.umax * b.umax) if a.umax * b.umax <= U64_MAX else _FULL_U
    corners = (a.smin * b.smin, a.smin * b.smax, a.smax * b.smin, a.smax * b.smax)
    return _make(_s(min(corners), max(corners)), u)


def _div(a: Bounds, b: Bounds) -> Bounds:
    if b.umin == 0:
        return _make(_FULL_S, (0, a.umax))
    return _make(_FULL_S, (a.umin // b.umax, a.umax // b.umin))


def _mod(a: Bounds, b: Bounds) -> Bounds:
    if a.umax < b.umin:
        return a
    if b.umin == 0:
        return _make(_FULL_S, (0, a.umax))
    return _make(_FULL_S, (0, min(a.umax, b.umax - 1)))


def _bit_ceiling(value: int) -> int:
    return min((1 << value.bit_length()) - 1, U64_MAX)


def _shift_amount(b: Bounds, bits: int) -> int | None:
    return b.umin & (bits - 1) if b.is_const else None


def _lsh(a: Bounds, b: Bounds) -> Bounds:
    k = _shift_amount(b, 64)
    if k is None or a.umax << k > U64_MAX:
        return Bounds()
    return _make(_FULL_S, (a.umin << k, a.umax << k))


def _rsh(a: Bounds, b: Bounds) -> Bounds:
    k = _shift_amount(b, 64)
    if k is None:
        return _make(_FULL_S, (0, a.umax))
    return _make(_FULL_S, (a.umin >> k, a.umax >> k))


def _arsh(a: Bounds, b: Bounds) -> Bounds:
    k = _shift_amount(b, 64)
    if k is None:
        return _make((min(a.smin, 0), max(a.smax, 0)), _FULL_U)
    return _make((a.smin >> k, a.smax >> k), _FULL_U)


def _neg(a: Bounds, _b: Bounds) -> Bounds:
    if a.smin == S64_MIN:
        return Bounds()
    return _make((-a.smax, -a.smin), _FULL_U)


_OPS = {
    op.BPF_ADD: _add,
    op.BPF_SUB: _sub,
    op.BPF_MUL: _mul,
    op.BPF_DIV: _div,
    op.BPF_MOD: _mod,
    op.BPF_AND: lambda a, b: _make(_FULL_S, (0, min(a.umax, b.umax))),
    op.BPF_OR: lambda a, b: _make(_FULL_S, (max(a.umin, b.umin), _bit_ceiling(max(a.umax, b.umax)))),
    op.BPF_XOR: lambda a, b: _make(_FULL_S, (0, _bit_ceiling(max(a.umax, b.umax)))),
    op.BPF_LSH: _lsh,
    op.BPF_RSH: _rsh,
    op.BPF_ARSH: _arsh,
    op.BPF_NEG: _neg,
    op.BPF_MOV: lambda a, b: b,
}

_U32 = Bounds.unsigned(0, U32_MAX)


def _low32(b: Bounds) -> Bounds:
    if b.is_const:
        return Bounds.const(b.umin & U32_MAX)
    return b if b.umax <= U32_MAX else _U32


def alu_bounds(code: int, a: Bounds, b: Bounds, *, wide: bool = True) -> Bounds:
    """ALU 结果区间。a 为目的操作数，b 为源操作数（NEG 忽略 b）。"""
    if not wide:
        a, b = _low32(a), _low32(b)
    if a.is_const and b.is_const:
        return Bounds.const(alu(code, a.umin, b.umin, wide=wide))
    if not wide:
        if code in (op.BPF_ARSH, op.BPF_NEG):
            return _U32
        if code == op.BPF_MOV:
            return b
        result = _OPS[code](a, b)
        return result if result.umax <= U32_MAX else _U32
    return _OPS[code](a, b)


# 条件跳转细化


def _intersect(a: Bounds, b: Bounds) -> Bounds | None:
    return Bounds(max(a.smin, b.smin), min(a.smax, b.smax), max(a.umin, b.umin), min(a.umax, b.umax)).synced()


def _exclude(b: Bounds, value: int) -> Bounds | None:
    smin, smax, umin, umax = b.smin, b.smax, b.umin, b.umax
    s_value = to_s64(value)
    if umin == value:
        umin += 1
    if umax == value:
        umax -= 1
    if smin == s_value:
        smin += 1
    if smax == s_value:
        smax -= 1
    return Bounds(smin, smax, umin, umax).synced()


_MIRROR = {
    op.BPF_JLT: op.BPF_JGT,
    op.BPF_JLE: op.BPF_JGE,
    op.BPF_JSLT: op.BPF_JSGT,
    op.BPF_JSLE: op.BPF_JSGE,
}


def _greater(d: Bounds, s: Bounds, *, strict: bool, is_signed: bool) -> tuple[Bounds, Bounds] | None:
    # d > s（strict）或 d >= s
    step = 1 if strict else 0
    if is_signed:
        d2 = Bounds(max(d.smin, s.smin + step), d.smax, d.umin, d.umax)
        s2 = Bounds(s.smin, min(s.smax, d.smax - step), s.umin, s.umax)
    else:
        d2 = Bounds(d.smin, d.smax, max(d.umin, s.umin + step), d.umax)
        s2 = Bounds(s.smin, s.smax, s.umin, min(s.umax, d.umax - step))
    d2, s2 = d2.synced(), s2.synced()
    if d2 is None or s2 is None:
        return None
    return d2, s2


def refine(code: int, d: Bounds, s: Bounds, taken: bool) -> tuple[Bounds, Bounds] | None:
    """按分支谓词收紧 (dst, src)；该分支不可达时返回 None。"""
    if d.is_const and s.is_const:
        return (d, s) if jmp_taken(code, d.umin, s.umin) == taken else None
    if code == op.BPF_JNE:
        code, taken = op.BPF_JEQ, not taken
    if code == op.BPF_JEQ:
        if taken:
            merged = _intersect(d, s)
            return None if merged is None else (merged, merged)
        if s.is_const:
            d2 = _exclude(d, s.umin)
            return None if d2 is None else (d2, s)
        if d.is_const:
            s2 = _exclude(s, d.umin)
            return None if s2 is None else (d, s2)
        return d, s
    if code == op.BPF_JSET:
        return d, s
    if code in _MIRROR:
        swapped = refine(_MIRROR[code], s, d, taken)
        return None if swapped is None else (swapped[1], swapped[0])
    is_signed = code in (op.BPF_JSGT, op.BPF_JSGE)
    strict = code in (op.BPF_JGT, op.BPF_JSGT)
    if taken:
        return _greater(d, s, strict=strict, is_signed=is_signed)
    # not (d > s) 即 s >= d；not (d >= s) 即 s > d
    swapped = _greater(s, d, strict=not strict, is_signed=is_signed)
    return None if swapped is None else (swapped[1], swapped[0])
