//! GHASH over GF(2^128) with the GCM reduction polynomial x^128 + x^7 + x^2 + x + 1.
//!
//! Field elements are held as big-endian `u128`, so the x^0 coefficient is the
//! most significant bit of the first byte. On x86_64 with PCLMULQDQ the product
//! is a carry-less multiply followed by a shift-and-fold reduction; otherwise
//! Shoup's 4-bit table is used (sixteen precomputed multiples of `H`, one
//! nibble of the operand per round).

// R = 11100001 || 0^120
const R: u128 = 0xe1 << 120;

// Reduction of the four bits shifted out when multiplying by x^4.
const LAST4: [u16; 16] = [
    0x0000, 0x1c20, 0x3840, 0x2460, 0x7080, 0x6ca0, 0x48c0, 0x54e0, 0xe100, 0xfd20, 0xd940,
    0xc560, 0x9180, 0x8da0, 0xa9c0, 0xb5e0,
];

#[inline]
fn mul_x(v: u128) -> u128 {
    if v & 1 == 0 {
        v >> 1
    } else {
        (v >> 1) ^ R
    }
}

/// Precomputed multiplication table for one hash key `H = E_K(0^128)`.
#[derive(Clone)]
pub(crate) struct GhashKey {
    h: u128,
    table: [u128; 16],
    clmul: bool,
}

impl GhashKey {
    pub(crate) fn new(h: [u8; 16]) -> Self {
        let h = u128::from_be_bytes(h);
        let mut table = [0u128; 16];
        table[8] = h;
        let mut v = h;
        for i in [4, 2, 1] {
            v = mul_x(v);
            table[i] = v;
        }
        for i in [2, 4, 8] {
            for j in 1..i {
                table[i + j] = table[i] ^ table[j];
            }
        }
        Self { h, table, clmul: clmul_available() }
    }

    /// `x * H` in GF(2^128).
    #[inline]
    pub(crate) fn mul(&self, x: u128) -> u128 {
        #[cfg(target_arch = "x86_64")]
        if self.clmul {
            // SAFETY: `clmul` is only set when the CPU reports PCLMULQDQ.
            let (hi, lo) = unsafe { clmul_x86(x, self.h) };
            return reduce(hi, lo);
        }
        self.mul_table(x)
    }

    fn mul_table(&self, x: u128) -> u128 {
        let mut z = self.table[(x & 0xf) as usize];
        let mut x = x >> 4;
        for _ in 1..32 {
            let rem = (z & 0xf) as usize;
            z = (z >> 4) ^ ((LAST4[rem] as u128) << 112);
            z ^= self.table[(x & 0xf) as usize];
            x >>= 4;
        }
        z
    }
}

fn clmul_available() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::arch::is_x86_feature_detected!("pclmulqdq")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "pclmulqdq", enable = "sse2")]
unsafe fn clmul_x86(a: u128, b: u128) -> (u128, u128) {
    use std::arch::x86_64::*;
    let va = _mm_set_epi64x((a >> 64) as i64, a as i64);
    let vb = _mm_set_epi64x((b >> 64) as i64, b as i64);
    let lo: u128 = std::mem::transmute(_mm_clmulepi64_si128(va, vb, 0x00));
    let hi: u128 = std::mem::transmute(_mm_clmulepi64_si128(va, vb, 0x11));
    let m1: u128 = std::mem::transmute(_mm_clmulepi64_si128(va, vb, 0x10));
    let m2: u128 = std::mem::transmute(_mm_clmulepi64_si128(va, vb, 0x01));
    let mid = m1 ^ m2;
    (hi ^ (mid >> 64), lo ^ (mid << 64))
}

/// Reduces a 256-bit carry-less product of two bit-reflected operands.
///
/// The raw product puts x^k at bit 254-k, so one left shift makes it fully
/// reflected: `hi` holds x^0..x^127 and `lo` holds x^128..x^255. Each
/// x^(128+m) folds onto x^m, x^(m+1), x^(m+2), x^(m+7); in reflected form that
/// is a right shift, and the bits shifted past x^127 are folded once more.
#[inline]
fn reduce(hi: u128, lo: u128) -> u128 {
    let hi = (hi << 1) | (lo >> 127);
    let lo = lo << 1;
    let d = lo ^ (lo << 127) ^ (lo << 126) ^ (lo << 121);
    hi ^ d ^ (d >> 1) ^ (d >> 2) ^ (d >> 7)
}

/// Running GHASH state. Absorbs AAD, then data, then the lengths block.
pub(crate) struct Ghash<'a> {
    key: &'a GhashKey,
    acc: u128,
}

impl<'a> Ghash<'a> {
    pub(crate) fn new(key: &'a GhashKey) -> Self {
        Self { key, acc: 0 }
    }

    /// Absorbs `data` zero-padded to a whole number of blocks.
    pub(crate) fn update_padded(&mut self, data: &[u8]) {
        let mut blocks = data.chunks_exact(16);
        for block in &mut blocks {
            let x = u128::from_be_bytes(block.try_into().expect("16-byte block"));
            self.acc = self.key.mul(self.acc ^ x);
        }
        let rest = blocks.remainder();
        if !rest.is_empty() {
            let mut last = [0u8; 16];
            last[..rest.len()].copy_from_slice(rest);
            self.acc = self.key.mul(self.acc ^ u128::from_be_bytes(last));
        }
    }

    /// Absorbs `len(A) || len(C)` in bits and returns the hash.
    pub(crate) fn finalize(mut self, aad_len: usize, data_len: usize) -> u128 {
        let lengths = ((aad_len as u128 * 8) << 64) | (data_len as u128 * 8);
        self.acc = self.key.mul(self.acc ^ lengths);
        self.acc
    }
}
