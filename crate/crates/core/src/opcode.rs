//! EVM opcode table.

use std::fmt;

/// A single opcode byte.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Opcode(pub u8);

/// Static properties of one opcode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpcodeInfo {
    pub mnemonic: &'static str,
    pub byte: u8,
    pub stack_pops: u8,
    pub stack_pushes: u8,
    pub terminator: bool,
    pub supported: bool,
    /// False for byte values with no assigned instruction.
    pub defined: bool,
}

macro_rules! opcodes {
    ($($name:ident = $byte:literal, $pops:literal, $pushes:literal, $sup:literal;)*) => {
        impl Opcode {
            $(pub const $name: Opcode = Opcode($byte);)*
        }

        const TABLE: [Option<(&str, u8, u8, bool)>; 256] = {
            let mut t: [Option<(&str, u8, u8, bool)>; 256] = [None; 256];
            $(t[$byte] = Some((stringify!($name), $pops, $pushes, $sup));)*
            t
        };
    };
}

opcodes! {
    STOP = 0x00, 0, 0, true;
    ADD = 0x01, 2, 1, true;
    MUL = 0x02, 2, 1, true;
    SUB = 0x03, 2, 1, true;
    DIV = 0x04, 2, 1, true;
    SDIV = 0x05, 2, 1, true;
    MOD = 0x06, 2, 1, true;
    SMOD = 0x07, 2, 1, true;
    ADDMOD = 0x08, 3, 1, true;
    MULMOD = 0x09, 3, 1, true;
    EXP = 0x0a, 2, 1, true;
    SIGNEXTEND = 0x0b, 2, 1, true;
    LT = 0x10, 2, 1, true;
    GT = 0x11, 2, 1, true;
    SLT = 0x12, 2, 1, true;
    SGT = 0x13, 2, 1, true;
    EQ = 0x14, 2, 1, true;
    ISZERO = 0x15, 1, 1, true;
    AND = 0x16, 2, 1, true;
    OR = 0x17, 2, 1, true;
    XOR = 0x18, 2, 1, true;
    NOT = 0x19, 1, 1, true;
    BYTE = 0x1a, 2, 1, true;
    SHL = 0x1b, 2, 1, true;
    SHR = 0x1c, 2, 1, true;
    SAR = 0x1d, 2, 1, true;
    SHA3 = 0x20, 2, 1, true;
    ADDRESS = 0x30, 0, 1, true;
    BALANCE = 0x31, 1, 1, true;
    ORIGIN = 0x32, 0, 1, false;
    CALLER = 0x33, 0, 1, true;
    CALLVALUE = 0x34, 0, 1, true;
    CALLDATALOAD = 0x35, 1, 1, true;
    CALLDATASIZE = 0x36, 0, 1, true;
    CALLDATACOPY = 0x37, 3, 0, false;
    CODESIZE = 0x38, 0, 1, false;
    CODECOPY = 0x39, 3, 0, false;
    GASPRICE = 0x3a, 0, 1, false;
    EXTCODESIZE = 0x3b, 1, 1, false;
    EXTCODECOPY = 0x3c, 4, 0, false;
    RETURNDATASIZE = 0x3d, 0, 1, false;
    RETURNDATACOPY = 0x3e, 3, 0, false;
    EXTCODEHASH = 0x3f, 1, 1, false;
    BLOCKHASH = 0x40, 1, 1, false;
    COINBASE = 0x41, 0, 1, false;
    TIMESTAMP = 0x42, 0, 1, true;
    NUMBER = 0x43, 0, 1, true;
    PREVRANDAO = 0x44, 0, 1, false;
    GASLIMIT = 0x45, 0, 1, false;
    CHAINID = 0x46, 0, 1, false;
    SELFBALANCE = 0x47, 0, 1, false;
    BASEFEE = 0x48, 0, 1, false;
    BLOBHASH = 0x49, 1, 1, false;
    BLOBBASEFEE = 0x4a, 0, 1, false;
    POP = 0x50, 1, 0, true;
    MLOAD = 0x51, 1, 1, true;
    MSTORE = 0x52, 2, 0, true;
    MSTORE8 = 0x53, 2, 0, true;
    SLOAD = 0x54, 1, 1, true;
    SSTORE = 0x55, 2, 0, true;
    JUMP = 0x56, 1, 0, true;
    JUMPI = 0x57, 2, 0, true;
    PC = 0x58, 0, 1, true;
    MSIZE = 0x59, 0, 1, false;
    GAS = 0x5a, 0, 1, true;
    JUMPDEST = 0x5b, 0, 0, true;
    TLOAD = 0x5c, 1, 1, false;
    TSTORE = 0x5d, 2, 0, false;
    MCOPY = 0x5e, 3, 0, false;
    PUSH0 = 0x5f, 0, 1, true;
    PUSH1 = 0x60, 0, 1, true;
    PUSH2 = 0x61, 0, 1, true;
    PUSH3 = 0x62, 0, 1, true;
    PUSH4 = 0x63, 0, 1, true;
    PUSH5 = 0x64, 0, 1, true;
    PUSH6 = 0x65, 0, 1, true;
    PUSH7 = 0x66, 0, 1, true;
    PUSH8 = 0x67, 0, 1, true;
    PUSH9 = 0x68, 0, 1, true;
    PUSH10 = 0x69, 0, 1, true;
    PUSH11 = 0x6a, 0, 1, true;
    PUSH12 = 0x6b, 0, 1, true;
    PUSH13 = 0x6c, 0, 1, true;
    PUSH14 = 0x6d, 0, 1, true;
    PUSH15 = 0x6e, 0, 1, true;
    PUSH16 = 0x6f, 0, 1, true;
    PUSH17 = 0x70, 0, 1, true;
    PUSH18 = 0x71, 0, 1, true;
    PUSH19 = 0x72, 0, 1, true;
    PUSH20 = 0x73, 0, 1, true;
    PUSH21 = 0x74, 0, 1, true;
    PUSH22 = 0x75, 0, 1, true;
    PUSH23 = 0x76, 0, 1, true;
    PUSH24 = 0x77, 0, 1, true;
    PUSH25 = 0x78, 0, 1, true;
    PUSH26 = 0x79, 0, 1, true;
    PUSH27 = 0x7a, 0, 1, true;
    PUSH28 = 0x7b, 0, 1, true;
    PUSH29 = 0x7c, 0, 1, true;
    PUSH30 = 0x7d, 0, 1, true;
    PUSH31 = 0x7e, 0, 1, true;
    PUSH32 = 0x7f, 0, 1, true;
    DUP1 = 0x80, 1, 2, true;
    DUP2 = 0x81, 2, 3, true;
    DUP3 = 0x82, 3, 4, true;
    DUP4 = 0x83, 4, 5, true;
    DUP5 = 0x84, 5, 6, true;
    DUP6 = 0x85, 6, 7, true;
    DUP7 = 0x86, 7, 8, true;
    DUP8 = 0x87, 8, 9, true;
    DUP9 = 0x88, 9, 10, true;
    DUP10 = 0x89, 10, 11, true;
    DUP11 = 0x8a, 11, 12, true;
    DUP12 = 0x8b, 12, 13, true;
    DUP13 = 0x8c, 13, 14, true;
    DUP14 = 0x8d, 14, 15, true;
    DUP15 = 0x8e, 15, 16, true;
    DUP16 = 0x8f, 16, 17, true;
    SWAP1 = 0x90, 2, 2, true;
    SWAP2 = 0x91, 3, 3, true;
    SWAP3 = 0x92, 4, 4, true;
    SWAP4 = 0x93, 5, 5, true;
    SWAP5 = 0x94, 6, 6, true;
    SWAP6 = 0x95, 7, 7, true;
    SWAP7 = 0x96, 8, 8, true;
    SWAP8 = 0x97, 9, 9, true;
    SWAP9 = 0x98, 10, 10, true;
    SWAP10 = 0x99, 11, 11, true;
    SWAP11 = 0x9a, 12, 12, true;
    SWAP12 = 0x9b, 13, 13, true;
    SWAP13 = 0x9c, 14, 14, true;
    SWAP14 = 0x9d, 15, 15, true;
    SWAP15 = 0x9e, 16, 16, true;
    SWAP16 = 0x9f, 17, 17, true;
    LOG0 = 0xa0, 2, 0, false;
    LOG1 = 0xa1, 3, 0, false;
    LOG2 = 0xa2, 4, 0, false;
    LOG3 = 0xa3, 5, 0, false;
    LOG4 = 0xa4, 6, 0, false;
    CREATE = 0xf0, 3, 1, false;
    CALL = 0xf1, 7, 1, true;
    CALLCODE = 0xf2, 7, 1, true;
    RETURN = 0xf3, 2, 0, true;
    DELEGATECALL = 0xf4, 6, 1, true;
    CREATE2 = 0xf5, 4, 1, false;
    STATICCALL = 0xfa, 6, 1, true;
    REVERT = 0xfd, 2, 0, true;
    INVALID = 0xfe, 0, 0, true;
    SELFDESTRUCT = 0xff, 1, 0, true;
}

impl Opcode {
    pub fn info(self) -> OpcodeInfo {
        match TABLE[self.0 as usize] {
            Some((mnemonic, pops, pushes, supported)) => OpcodeInfo {
                mnemonic,
                byte: self.0,
                stack_pops: pops,
                stack_pushes: pushes,
                terminator: self.is_terminator(),
                supported,
                defined: true,
            },
            None => OpcodeInfo {
                mnemonic: "INVALID",
                byte: self.0,
                stack_pops: 0,
                stack_pushes: 0,
                terminator: true,
                supported: false,
                defined: false,
            },
        }
    }

    pub fn is_defined(self) -> bool {
        TABLE[self.0 as usize].is_some()
    }

    pub fn is_supported(self) -> bool {
        matches!(TABLE[self.0 as usize], Some((_, _, _, true)))
    }

    /// Immediate byte count for PUSH1..PUSH32, zero otherwise.
    pub fn push_width(self) -> usize {
        if (0x60..=0x7f).contains(&self.0) {
            (self.0 - 0x5f) as usize
        } else {
            0
        }
    }

    pub fn is_push(self) -> bool {
        self.push_width() > 0
    }

    /// Opcodes after which control does not fall through to the next instruction.
    /// Undefined bytes halt like INVALID.
    pub fn is_terminator(self) -> bool {
        matches!(
            self,
            Opcode::STOP
                | Opcode::RETURN
                | Opcode::REVERT
                | Opcode::JUMP
                | Opcode::JUMPI
                | Opcode::SELFDESTRUCT
                | Opcode::INVALID
        ) || !self.is_defined()
    }

    pub fn mnemonic(self) -> &'static str {
        self.info().mnemonic
    }

    /// Looks up an opcode by mnemonic (case-insensitive). `SHA3` and `KECCAK256` are aliases.
    pub fn from_mnemonic(name: &str) -> Option<Opcode> {
        let upper = name.to_ascii_uppercase();
        if upper == "KECCAK256" {
            return Some(Opcode::SHA3);
        }
        TABLE.iter().position(|e| matches!(e, Some((m, ..)) if *m == upper)).map(|b| Opcode(b as u8))
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_defined() {
            f.write_str(self.mnemonic())
        } else {
            write!(f, "INVALID(0x{:02x})", self.0)
        }
    }
}

impl fmt::Debug for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn terminators_are_the_halting_and_jumping_set() {
        let terms: Vec<u8> = (0..=255u8).filter(|b| Opcode(*b).is_terminator() && Opcode(*b).is_defined()).collect();
        assert_eq!(terms, vec![0x00, 0x56, 0x57, 0xf3, 0xfd, 0xfe, 0xff]);
    }

    #[test]
    fn push_widths() {
        assert_eq!(Opcode::PUSH1.push_width(), 1);
        assert_eq!(Opcode::PUSH32.push_width(), 32);
        assert_eq!(Opcode::PUSH0.push_width(), 0);
    }

    #[test]
    fn unsupported_environment_reads() {
        assert!(!Opcode::ORIGIN.is_supported());
        assert!(!Opcode::CALLDATACOPY.is_supported());
        assert!(Opcode::CALLDATALOAD.is_supported());
        assert!(!Opcode(0x0c).is_defined());
        assert_eq!(Opcode(0x0c).to_string(), "INVALID(0x0c)");
    }

    #[test]
    fn mnemonic_lookup() {
        assert_eq!(Opcode::from_mnemonic("sstore"), Some(Opcode::SSTORE));
        assert_eq!(Opcode::from_mnemonic("KECCAK256"), Some(Opcode::SHA3));
        assert_eq!(Opcode::from_mnemonic("NOPE"), None);
    }
}
