//! Uniquely decodable codes for the binary-input adder channel.
//!
//! In full-duplex operation a receiver only learns how many of the other
//! units sent a one in each slot. Each unit therefore spreads every
//! information bit over `n` slots using one of two codewords, chosen so that
//! the slot-wise sums of all units' codewords determine every unit's bit.
//!
//! Codes are described by difference vectors `d_u in {-1, 0, 1}^n`. User `u`
//! sends `c_u(0) = [d_u == -1]` and `c_u(1) = [d_u == 1]`, so
//! `sum_u c_u(b_u) = sum_u c_u(0) + sum_u b_u d_u`. The code is uniquely
//! decodable exactly when no nonzero `e in {-1, 0, 1}^K` has `sum e_u d_u = 0`.
//!
//! Larger codes are obtained by the doubling step
//! `D -> {(d, d), (d, -d)} + {(e_i, 0)}`, which takes `T` users on `n` slots to
//! `2T + n` users on `2n` slots. Odd lengths start from fixed base sets.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::OnceLock;

use crate::{Error, Mode, Result};

/// Largest number of units with a tabulated code.
pub const MAX_FD_UNITS: usize = 18;

/// Codeword length for `K = 1..=18`.
const LENGTHS: [usize; MAX_FD_UNITS] = [1, 2, 2, 3, 3, 4, 4, 4, 5, 5, 6, 6, 6, 7, 7, 8, 8, 8];

const BASE_3: [[i8; 3]; 5] = [[1, -1, -1], [1, -1, 1], [1, 0, 1], [1, 1, -1], [0, 1, -1]];

const BASE_5: [[i8; 5]; 10] = [
    [1, 1, 1, -1, -1],
    [1, 1, 1, 1, -1],
    [1, 1, -1, -1, 1],
    [1, 1, 1, -1, 1],
    [1, -1, -1, -1, 1],
    [1, -1, 0, -1, -1],
    [1, 0, -1, -1, 1],
    [1, -1, 1, 1, 0],
    [0, 1, -1, -1, -1],
    [1, 1, -1, 1, 0],
];

const BASE_7: [[i8; 7]; 15] = [
    [1, 1, -1, 1, 1, 1, -1],
    [1, -1, -1, -1, -1, -1, -1],
    [1, 1, 1, 1, 1, -1, -1],
    [1, 1, 1, -1, -1, -1, 1],
    [1, -1, -1, -1, -1, -1, 1],
    [1, 1, -1, -1, 1, 1, 1],
    [1, -1, -1, 1, 1, -1, 1],
    [1, -1, 1, -1, 1, 1, 1],
    [1, 1, -1, 1, -1, -1, 1],
    [1, -1, 1, 1, -1, 1, 1],
    [0, 1, 1, -1, -1, -1, 1],
    [1, -1, 0, -1, 1, -1, 1],
    [1, 1, 1, 0, 1, 1, -1],
    [1, 1, 1, 1, 1, -1, 0],
    [1, 0, 1, -1, 1, 1, -1],
];

/// Per-unit stable rate in bits per slot: `1/K` for TDMA, `1/n` for
/// full-duplex with the tabulated code length `n`.
pub fn stable_rate(mode: Mode, units: usize) -> Result<f64> {
    if units == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    match mode {
        Mode::Tdma => Ok(1.0 / units as f64),
        Mode::FullDuplex => Ok(1.0 / codeword_length(units)? as f64),
    }
}

/// Codeword length `n` for `units` full-duplex users.
pub fn codeword_length(units: usize) -> Result<usize> {
    match units {
        1..=MAX_FD_UNITS => Ok(LENGTHS[units - 1]),
        _ => Err(Error::UnsupportedSize(units)),
    }
}

fn difference_matrix(n: usize) -> Vec<Vec<i8>> {
    match n {
        1 => vec![vec![1]],
        3 => BASE_3.iter().map(|r| r.to_vec()).collect(),
        5 => BASE_5.iter().map(|r| r.to_vec()).collect(),
        7 => BASE_7.iter().map(|r| r.to_vec()).collect(),
        _ => {
            debug_assert!(n.is_multiple_of(2));
            let half = difference_matrix(n / 2);
            let mut rows = Vec::with_capacity(2 * half.len() + n / 2);
            for d in &half {
                rows.push(d.iter().chain(d).copied().collect());
                rows.push(d.iter().copied().chain(d.iter().map(|x| -x)).collect());
            }
            for i in 0..n / 2 {
                let mut e = vec![0i8; n];
                e[i] = 1;
                rows.push(e);
            }
            rows
        }
    }
}

/// Slot-wise sums of all users' codewords.
pub type SumSequence = Vec<u32>;

/// Two codewords per user; sums of any selection are distinct.
#[derive(Debug, Clone)]
pub struct UdCodebook {
    units: usize,
    n: usize,
    /// `codewords[u][b]` is the 0/1 codeword of user `u` for bit `b`.
    codewords: Vec<[Vec<u8>; 2]>,
    table: OnceLock<HashMap<u64, u32>>,
}

/// Code for `units` users with the tabulated length.
pub fn build_codebook(units: usize) -> Result<UdCodebook> {
    let n = codeword_length(units)?;
    let codewords = difference_matrix(n)
        .into_iter()
        .take(units)
        .map(|d| {
            [
                d.iter().map(|&x| u8::from(x == -1)).collect(),
                d.iter().map(|&x| u8::from(x == 1)).collect(),
            ]
        })
        .collect::<Vec<_>>();
    debug_assert_eq!(codewords.len(), units);
    Ok(UdCodebook {
        units,
        n,
        codewords,
        table: OnceLock::new(),
    })
}

/// Bits of `bits` as a `u32` mask, unit `u` at bit `u`.
fn pack_bits(bits: &[bool]) -> u32 {
    bits.iter().enumerate().fold(0, |m, (u, &b)| m | (u32::from(b) << u))
}

impl UdCodebook {
    pub fn units(&self) -> usize {
        self.units
    }

    /// Codeword length in slots.
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn codeword(&self, unit: usize, bit: bool) -> &[u8] {
        &self.codewords[unit][usize::from(bit)]
    }

    /// Channel symbol of `unit` in slot `t` of a block carrying `bit`.
    #[inline]
    pub fn symbol(&self, unit: usize, bit: bool, t: usize) -> bool {
        self.codewords[unit][usize::from(bit)][t] == 1
    }

    pub fn encode(&self, bits: &[bool]) -> Result<SumSequence> {
        if bits.len() != self.units {
            return Err(Error::invalid(format!(
                "expected {} bits, got {}",
                self.units,
                bits.len()
            )));
        }
        let mut sums = vec![0u32; self.n];
        for (u, &b) in bits.iter().enumerate() {
            for (s, &c) in sums.iter_mut().zip(self.codeword(u, b)) {
                *s += u32::from(c);
            }
        }
        Ok(sums)
    }

    fn pack_sums(&self, sums: &[u32]) -> u64 {
        sums.iter().fold(0u64, |acc, &s| (acc << 5) | u64::from(s))
    }

    fn table(&self) -> &HashMap<u64, u32> {
        self.table.get_or_init(|| {
            let mut t = HashMap::with_capacity(1 << self.units);
            let mut bits = vec![false; self.units];
            for mask in 0u32..(1u32 << self.units) {
                for (u, b) in bits.iter_mut().enumerate() {
                    *b = mask >> u & 1 == 1;
                }
                let sums = self.encode(&bits).expect("length matches");
                t.insert(self.pack_sums(&sums), mask);
            }
            t
        })
    }

    /// Whether all `2^K` bit vectors give distinct sums.
    pub fn is_uniquely_decodable(&self) -> bool {
        self.table().len() == 1usize << self.units
    }

    /// The bit vector whose codeword sums equal `sums`.
    pub fn decode_sums(&self, sums: &[u32]) -> Result<Vec<bool>> {
        if sums.len() != self.n {
            return Err(Error::NoPreimage(format!(
                "expected {} sums, got {}",
                self.n,
                sums.len()
            )));
        }
        if let Some(&s) = sums.iter().find(|&&s| s as usize > self.units) {
            return Err(Error::NoPreimage(format!("sum {s} exceeds K = {}", self.units)));
        }
        match self.table().get(&self.pack_sums(sums)) {
            Some(&mask) => Ok((0..self.units).map(|u| mask >> u & 1 == 1).collect()),
            None => Err(Error::NoPreimage(format!("{sums:?}"))),
        }
    }

    /// Decode the other units' bits at `receiver`, which knows its own bit
    /// and has estimated, for every slot of the block, how many other units
    /// sent a one. Returns the bits of all units except the receiver, in
    /// unit order.
    pub fn receiver_decode(&self, receiver: usize, own_bit: bool, weights: &[usize]) -> Result<Vec<bool>> {
        if receiver >= self.units {
            return Err(Error::invalid(format!(
                "receiver {receiver} out of range for K = {}",
                self.units
            )));
        }
        if weights.len() != self.n {
            return Err(Error::NoPreimage(format!(
                "expected {} weights, got {}",
                self.n,
                weights.len()
            )));
        }
        let own = self.codeword(receiver, own_bit);
        let sums: Vec<u32> = weights
            .iter()
            .zip(own)
            .map(|(&w, &c)| w as u32 + u32::from(c))
            .collect();
        let mut bits = self.decode_sums(&sums)?;
        if bits[receiver] != own_bit {
            return Err(Error::NoPreimage(format!(
                "weights {weights:?} contradict the receiver's own bit"
            )));
        }
        bits.remove(receiver);
        Ok(bits)
    }

    /// One text line per user and bit: `u<unit> b<bit> <codeword as 0/1>`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for u in 0..self.units {
            for b in [false, true] {
                let word: String = self
                    .codeword(u, b)
                    .iter()
                    .map(|&c| if c == 1 { '1' } else { '0' })
                    .collect();
                let _ = writeln!(out, "u{u} b{} {word}", u8::from(b));
            }
        }
        out
    }

    /// Bits of `mask` (unit `u` at bit `u`) encoded and packed; for fast checks.
    pub fn encode_mask(&self, mask: u32) -> SumSequence {
        let bits: Vec<bool> = (0..self.units).map(|u| mask >> u & 1 == 1).collect();
        self.encode(&bits).expect("length matches")
    }

    /// Mask form of a bit vector.
    pub fn mask_of(bits: &[bool]) -> u32 {
        pack_bits(bits)
    }
}
