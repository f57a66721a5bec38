//! Hand-assembled test contracts.
//!
//! The named fixtures live in `fixtures/` as an assembly listing plus the runtime
//! bytecode it assembles to. Micro-fixtures are inline hex.

use crate::asm::assemble;
use crate::bytecode::parse_hex;

#[derive(Debug, Clone, Copy)]
pub struct Fixture {
    pub name: &'static str,
    pub asm: &'static str,
    pub hex: &'static str,
}

impl Fixture {
    pub fn bytes(&self) -> Vec<u8> {
        parse_hex(self.hex).expect("fixture hex is valid").bytes
    }

    pub fn assembled(&self) -> Vec<u8> {
        assemble(self.asm).expect("fixture listing assembles")
    }
}

/// Array-stored investors paid in a loop.
pub const CHAIN: Fixture =
    Fixture { name: "chain", asm: include_str!("../fixtures/chain.asm"), hex: include_str!("../fixtures/chain.hex") };

/// Fee, gated mapping credit, and a withdraw function.
pub const WITHDRAW: Fixture = Fixture {
    name: "withdraw",
    asm: include_str!("../fixtures/withdraw.asm"),
    hex: include_str!("../fixtures/withdraw.hex"),
};

/// Owner sweep or refund; payback only.
pub const WALLET: Fixture = Fixture {
    name: "wallet",
    asm: include_str!("../fixtures/wallet.asm"),
    hex: include_str!("../fixtures/wallet.hex"),
};

pub const NAMED: [Fixture; 3] = [CHAIN, WITHDRAW, WALLET];

pub const STRAIGHT_LINE: &str = "600160020160005500";
/// PUSH1 3; JUMP; JUMPDEST; STOP
pub const SIMPLE_JUMP: &str = "6003565b00";
/// Returns CALLVALUE to CALLER.
pub const PAYBACK: &str = "600060006000600034335af100";
/// Writes 7 to slot 0 in each of two loop rounds.
pub const CONST_LOOP: &str = "\
PUSH 0
head: JUMPDEST
DUP1
PUSH 0
CALLDATALOAD
GT
ISZERO
PUSH @out
JUMPI
PUSH 7
PUSH 0
SSTORE
PUSH 1
ADD
PUSH @head
JUMP
out: JUMPDEST
STOP";

/// `n` sequential two-way branches on calldata words; `2^n` paths.
pub fn diamonds(n: usize) -> String {
    let mut s = String::new();
    for i in 0..n {
        s.push_str(&format!(
            "PUSH {off}\nCALLDATALOAD\nPUSH @t{i}\nJUMPI\nPUSH {i}\nPOP\nt{i}: JUMPDEST\n",
            off = i * 32
        ));
    }
    s.push_str("STOP\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bytecode::to_hex;

    #[test]
    fn listings_match_hex() {
        for f in NAMED {
            assert_eq!(f.bytes(), f.assembled(), "{}: expected hex {}", f.name, to_hex(&f.assembled()));
        }
    }
}
