//! 256-bit EVM word arithmetic used by constant folding and concretization.

use ruint::Uint;

use crate::opcode::Opcode;

pub type U256 = Uint<256, 4>;

pub(crate) const ONE: U256 = U256::from_limbs([1, 0, 0, 0]);

/// All-ones in the low 160 bits: the mask Solidity applies to addresses.
pub const ADDRESS_MASK: U256 = U256::from_limbs([u64::MAX, u64::MAX, 0xffff_ffff, 0]);

pub(crate) fn from_bool(b: bool) -> U256 {
    if b {
        ONE
    } else {
        U256::ZERO
    }
}

fn negative(x: &U256) -> bool {
    x.bit(255)
}

fn magnitude(x: U256) -> U256 {
    if negative(&x) {
        x.wrapping_neg()
    } else {
        x
    }
}

pub(crate) fn div(a: U256, b: U256) -> U256 {
    a.checked_div(b).unwrap_or(U256::ZERO)
}

pub(crate) fn rem(a: U256, b: U256) -> U256 {
    a.checked_rem(b).unwrap_or(U256::ZERO)
}

pub(crate) fn sdiv(a: U256, b: U256) -> U256 {
    if b.is_zero() {
        return U256::ZERO;
    }
    let q = magnitude(a) / magnitude(b);
    if negative(&a) ^ negative(&b) {
        q.wrapping_neg()
    } else {
        q
    }
}

pub(crate) fn smod(a: U256, b: U256) -> U256 {
    if b.is_zero() {
        return U256::ZERO;
    }
    let r = magnitude(a) % magnitude(b);
    if negative(&a) {
        r.wrapping_neg()
    } else {
        r
    }
}

pub(crate) fn slt(a: U256, b: U256) -> bool {
    if negative(&a) == negative(&b) {
        a < b
    } else {
        negative(&a)
    }
}

pub(crate) fn signextend(byte: U256, x: U256) -> U256 {
    let Some(b) = small(byte).filter(|b| *b < 31) else {
        return x;
    };
    let sign_bit = b * 8 + 7;
    let low = (ONE << (sign_bit + 1)) - ONE;
    if x.bit(sign_bit) {
        x | !low
    } else {
        x & low
    }
}

pub(crate) fn byte(index: U256, x: U256) -> U256 {
    match small(index).filter(|i| *i < 32) {
        Some(i) => U256::from(x.to_be_bytes::<32>()[i]),
        None => U256::ZERO,
    }
}

pub(crate) fn shl(shift: U256, v: U256) -> U256 {
    small(shift).filter(|s| *s < 256).map_or(U256::ZERO, |s| v << s)
}

pub(crate) fn shr(shift: U256, v: U256) -> U256 {
    small(shift).filter(|s| *s < 256).map_or(U256::ZERO, |s| v >> s)
}

pub(crate) fn sar(shift: U256, v: U256) -> U256 {
    match small(shift).filter(|s| *s < 256) {
        Some(s) => v.arithmetic_shr(s),
        None if negative(&v) => U256::MAX,
        None => U256::ZERO,
    }
}

/// The value as a `usize` when it fits.
pub fn small(x: U256) -> Option<usize> {
    usize::try_from(x).ok()
}

/// Parses a decimal or `0x`-prefixed hexadecimal word.
pub fn parse_word(s: &str) -> Option<U256> {
    let s = s.trim();
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(h) => U256::from_str_radix(h, 16).ok(),
        None => U256::from_str_radix(s, 10).ok(),
    }
}

/// Result of a pure arithmetic/comparison/bitwise opcode over constant operands,
/// given in stack pop order (top of stack first). `None` for any other opcode.
pub fn eval_pure(op: Opcode, args: &[U256]) -> Option<U256> {
    let a = |i: usize| args.get(i).copied();
    Some(match op {
        Opcode::ADD => a(0)?.wrapping_add(a(1)?),
        Opcode::MUL => a(0)?.wrapping_mul(a(1)?),
        Opcode::SUB => a(0)?.wrapping_sub(a(1)?),
        Opcode::DIV => div(a(0)?, a(1)?),
        Opcode::SDIV => sdiv(a(0)?, a(1)?),
        Opcode::MOD => rem(a(0)?, a(1)?),
        Opcode::SMOD => smod(a(0)?, a(1)?),
        Opcode::ADDMOD => a(0)?.add_mod(a(1)?, a(2)?),
        Opcode::MULMOD => a(0)?.mul_mod(a(1)?, a(2)?),
        Opcode::EXP => a(0)?.wrapping_pow(a(1)?),
        Opcode::SIGNEXTEND => signextend(a(0)?, a(1)?),
        Opcode::LT => from_bool(a(0)? < a(1)?),
        Opcode::GT => from_bool(a(0)? > a(1)?),
        Opcode::SLT => from_bool(slt(a(0)?, a(1)?)),
        Opcode::SGT => from_bool(slt(a(1)?, a(0)?)),
        Opcode::EQ => from_bool(a(0)? == a(1)?),
        Opcode::ISZERO => from_bool(a(0)?.is_zero()),
        Opcode::AND => a(0)? & a(1)?,
        Opcode::OR => a(0)? | a(1)?,
        Opcode::XOR => a(0)? ^ a(1)?,
        Opcode::NOT => !a(0)?,
        Opcode::BYTE => byte(a(0)?, a(1)?),
        Opcode::SHL => shl(a(0)?, a(1)?),
        Opcode::SHR => shr(a(0)?, a(1)?),
        Opcode::SAR => sar(a(0)?, a(1)?),
        _ => return None,
    })
}
