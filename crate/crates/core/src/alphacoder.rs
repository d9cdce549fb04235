//! Adaptive alphabetic coding driven by the dynamic tree.
//!
//! A symbol's codeword is its root-to-ε path in the logical tree, one bit
//! per node where both subtrees hold logical leaves (0 = left, 1 = right).
//! Since the logical tree keeps symbols in key order, codewords are
//! prefix-free and alphabetic. The encoder emits the current codeword and
//! then counts the access; the decoder walks the same tree and applies the
//! same update, so both stay in lockstep.

use std::fmt;

use thiserror::Error;

use crate::hierarchy::Turn;
use crate::optimal_tree::{DynError, DynTree};

pub const MAGIC: &[u8; 4] = b"ALC1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CoderError {
    #[error("alphabet needs at least two symbols, got {0}")]
    AlphabetTooSmall(usize),
    #[error("alphabet symbols must be strictly increasing (position {0})")]
    KeyOrder(usize),
    #[error("symbol not in alphabet")]
    NotInAlphabet,
    #[error("corrupt stream: {0}")]
    CorruptStream(String),
    #[error("stream ended early")]
    UnexpectedEof,
    #[error(transparent)]
    Tree(#[from] DynError),
}

/// Bits packed MSB-first.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct BitString {
    bytes: Vec<u8>,
    len: usize,
}

impl BitString {
    pub fn new() -> Self {
        Self::default()
    }

    /// The first `len` bits of `bytes`.
    pub fn from_bytes(bytes: Vec<u8>, len: usize) -> Self {
        assert!(len <= bytes.len() * 8);
        BitString { bytes, len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn push(&mut self, bit: bool) {
        if self.len.is_multiple_of(8) {
            self.bytes.push(0);
        }
        if bit {
            self.bytes[self.len / 8] |= 0x80 >> (self.len % 8);
        }
        self.len += 1;
    }

    pub fn get(&self, i: usize) -> Option<bool> {
        (i < self.len).then(|| self.bytes[i / 8] & (0x80 >> (i % 8)) != 0)
    }

    pub fn extend(&mut self, other: &BitString) {
        for i in 0..other.len {
            self.push(other.get(i).expect("in range"));
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(|i| self.get(i).expect("in range"))
    }

    pub fn is_prefix_of(&self, other: &BitString) -> bool {
        self.len <= other.len && (0..self.len).all(|i| self.get(i) == other.get(i))
    }

    /// Packed bytes, zero-padded to a byte boundary.
    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }
}

impl PartialOrd for BitString {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Lexicographic bit order.
impl Ord for BitString {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.iter().cmp(other.iter())
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.iter() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Reads bits MSB-first from a byte slice.
#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        BitReader { bytes, pos: 0 }
    }

    pub fn read(&mut self) -> Option<bool> {
        let byte = *self.bytes.get(self.pos / 8)?;
        let bit = byte & (0x80 >> (self.pos % 8)) != 0;
        self.pos += 1;
        Some(bit)
    }

    pub fn position(&self) -> usize {
        self.pos
    }
}

/// Encoder or decoder state over a fixed alphabet. Symbols are addressed by
/// rank in the alphabet.
#[derive(Debug, Clone)]
pub struct Coder {
    alphabet: Vec<Vec<u8>>,
    tree: DynTree<u32>,
    emitted: u64,
}

fn check_alphabet(alphabet: &[Vec<u8>]) -> Result<(), CoderError> {
    if alphabet.len() < 2 {
        return Err(CoderError::AlphabetTooSmall(alphabet.len()));
    }
    if let Some(i) = alphabet.windows(2).position(|w| w[0] >= w[1]) {
        return Err(CoderError::KeyOrder(i + 1));
    }
    Ok(())
}

impl Coder {
    /// Every symbol starts with weight 1.
    pub fn new(alphabet: Vec<Vec<u8>>) -> Result<Self, CoderError> {
        check_alphabet(&alphabet)?;
        let n = u32::try_from(alphabet.len()).map_err(|_| CoderError::AlphabetTooSmall(0))?;
        let tree = DynTree::build((0..n).map(|r| (r, 1)).collect())?;
        Ok(Coder {
            alphabet,
            tree,
            emitted: 0,
        })
    }

    /// Starts from an existing tree keyed by rank `0..alphabet.len()`.
    pub fn with_tree(alphabet: Vec<Vec<u8>>, tree: DynTree<u32>) -> Result<Self, CoderError> {
        check_alphabet(&alphabet)?;
        let keys: Vec<u32> = tree.elements().iter().map(|r| *r.key()).collect();
        if keys.len() != alphabet.len() || keys.iter().enumerate().any(|(i, &k)| k as usize != i) {
            return Err(CoderError::NotInAlphabet);
        }
        Ok(Coder {
            alphabet,
            tree,
            emitted: 0,
        })
    }

    /// The 256 single-byte symbols.
    pub fn bytes() -> Self {
        Self::new((0..=255u8).map(|b| vec![b]).collect()).expect("valid alphabet")
    }

    pub fn alphabet(&self) -> &[Vec<u8>] {
        &self.alphabet
    }

    pub fn tree(&self) -> &DynTree<u32> {
        &self.tree
    }

    pub fn emitted(&self) -> u64 {
        self.emitted
    }

    pub fn rank(&self, symbol: &[u8]) -> Result<u32, CoderError> {
        self.alphabet
            .binary_search_by(|s| s.as_slice().cmp(symbol))
            .map(|i| i as u32)
            .map_err(|_| CoderError::NotInAlphabet)
    }

    /// Current codeword of `rank`, without updating anything.
    pub fn codeword(&self, rank: u32) -> Result<BitString, CoderError> {
        let mut bits = BitString::new();
        let found = self.tree.route(|&k| -> Result<Turn, CoderError> {
            let left = rank <= k;
            bits.push(!left);
            Ok(if left { Turn::Left } else { Turn::Right })
        })?;
        match found {
            Some((rec, _)) if *rec.key() == rank => Ok(bits),
            _ => Err(CoderError::NotInAlphabet),
        }
    }

    pub fn encode_symbol(&mut self, rank: u32, out: &mut BitString) -> Result<(), CoderError> {
        let bits = self.codeword(rank)?;
        out.extend(&bits);
        self.tree.access(&rank)?;
        self.emitted += 1;
        Ok(())
    }

    pub fn decode_symbol(&mut self, input: &mut BitReader<'_>) -> Result<u32, CoderError> {
        let found = self.tree.route(|_| match input.read() {
            Some(false) => Ok(Turn::Left),
            Some(true) => Ok(Turn::Right),
            None => Err(CoderError::UnexpectedEof),
        })?;
        let rank = *found.ok_or(CoderError::UnexpectedEof)?.0.key();
        self.tree.access(&rank)?;
        self.emitted += 1;
        Ok(rank)
    }
}

/// Encodes `ranks` into a self-describing container.
pub fn encode_sequence(alphabet: Vec<Vec<u8>>, ranks: &[u32]) -> Result<Vec<u8>, CoderError> {
    let mut coder = Coder::new(alphabet)?;
    let mut payload = BitString::new();
    for &r in ranks {
        coder.encode_symbol(r, &mut payload)?;
    }
    let mut out = Vec::with_capacity(payload.as_bytes().len() + 64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(coder.alphabet.len() as u32).to_be_bytes());
    for s in &coder.alphabet {
        let len = u16::try_from(s.len())
            .map_err(|_| CoderError::CorruptStream("symbol longer than 65535 bytes".into()))?;
        out.extend_from_slice(&len.to_be_bytes());
        out.extend_from_slice(s);
    }
    out.extend_from_slice(&(ranks.len() as u64).to_be_bytes());
    out.extend_from_slice(payload.as_bytes());
    out.extend_from_slice(&crc32fast::hash(payload.as_bytes()).to_be_bytes());
    Ok(out)
}

/// Parsed container: alphabet and the decoded ranks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub alphabet: Vec<Vec<u8>>,
    pub ranks: Vec<u32>,
    pub payload_bits: usize,
}

impl Decoded {
    /// Concatenated symbol bytes.
    pub fn bytes(&self) -> Vec<u8> {
        self.ranks
            .iter()
            .flat_map(|&r| self.alphabet[r as usize].iter().copied())
            .collect()
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CoderError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(CoderError::UnexpectedEof)?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}

pub fn decode_sequence(container: &[u8]) -> Result<Decoded, CoderError> {
    let mut c = Cursor {
        bytes: container,
        pos: 0,
    };
    if c.take(4)? != MAGIC {
        return Err(CoderError::CorruptStream("bad magic".into()));
    }
    let n = u32::from_be_bytes(c.take(4)?.try_into().expect("4 bytes")) as usize;
    let mut alphabet = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let len = u16::from_be_bytes(c.take(2)?.try_into().expect("2 bytes")) as usize;
        alphabet.push(c.take(len)?.to_vec());
    }
    let m = u64::from_be_bytes(c.take(8)?.try_into().expect("8 bytes"));
    let rest = &container[c.pos..];
    if rest.len() < 4 {
        return Err(CoderError::UnexpectedEof);
    }
    let (payload, crc) = rest.split_at(rest.len() - 4);
    if crc32fast::hash(payload).to_be_bytes() != crc {
        return Err(CoderError::CorruptStream("checksum mismatch".into()));
    }
    let mut coder = Coder::new(alphabet)?;
    let mut input = BitReader::new(payload);
    let mut ranks = Vec::with_capacity(m.min(1 << 24) as usize);
    for _ in 0..m {
        ranks.push(coder.decode_symbol(&mut input)?);
    }
    let used = input.position();
    if used.div_ceil(8) != payload.len()
        || (!used.is_multiple_of(8) && payload[used / 8] << (used % 8) != 0)
    {
        return Err(CoderError::CorruptStream("trailing payload bits".into()));
    }
    Ok(Decoded {
        alphabet: coder.alphabet,
        ranks,
        payload_bits: used,
    })
}

/// Encodes raw bytes over the 256-symbol byte alphabet.
pub fn encode_bytes(data: &[u8]) -> Vec<u8> {
    let ranks: Vec<u32> = data.iter().map(|&b| b as u32).collect();
    encode_sequence((0..=255u8).map(|b| vec![b]).collect(), &ranks)
        .expect("byte alphabet covers every byte")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::HierConfig;

    fn ab() -> Vec<Vec<u8>> {
        vec![b"a".to_vec(), b"b".to_vec()]
    }

    #[test]
    fn bitstring_basics() {
        let mut b = BitString::new();
        for bit in [true, false, true, true, false, false, false, false, true] {
            b.push(bit);
        }
        assert_eq!(b.len(), 9);
        assert_eq!(b.as_bytes(), &[0b1011_0000, 0b1000_0000]);
        assert_eq!(b.to_string(), "101100001");
        let p = BitString::from_bytes(vec![0b1010_0000], 3);
        assert!(p.is_prefix_of(&b));
        assert!(p < b);
    }

    #[test]
    fn two_symbols_get_one_bit_each() {
        let c = Coder::new(ab()).unwrap();
        assert_eq!(c.codeword(0).unwrap().to_string(), "0");
        assert_eq!(c.codeword(1).unwrap().to_string(), "1");
        let mut c = c;
        let mut out = BitString::new();
        c.encode_symbol(0, &mut out).unwrap();
        c.encode_symbol(1, &mut out).unwrap();
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn four_key_codeword() {
        // tau = 2 freezes w' = (1, 2, 4, 1)
        let tree = DynTree::build_in_phase(
            vec![(0, 2), (1, 3), (2, 8), (3, 1)],
            HierConfig::flat(),
            12,
            6,
        )
        .unwrap();
        let alphabet = vec![b"a".to_vec(), b"b".to_vec(), b"c".to_vec(), b"d".to_vec()];
        let c = Coder::with_tree(alphabet, tree).unwrap();
        assert_eq!(c.codeword(2).unwrap().to_string(), "10");
    }

    #[test]
    fn alphabet_errors() {
        assert_eq!(
            Coder::new(vec![b"a".to_vec()]).unwrap_err(),
            CoderError::AlphabetTooSmall(1)
        );
        assert_eq!(
            Coder::new(vec![b"b".to_vec(), b"a".to_vec()]).unwrap_err(),
            CoderError::KeyOrder(1)
        );
        let c = Coder::new(ab()).unwrap();
        assert_eq!(c.rank(b"z").unwrap_err(), CoderError::NotInAlphabet);
        assert_eq!(
            c.clone()
                .encode_symbol(7, &mut BitString::new())
                .unwrap_err(),
            CoderError::NotInAlphabet
        );
    }

    #[test]
    fn empty_input_container() {
        let bytes = encode_bytes(b"");
        // magic + n + 256 * (2 + 1) + m + crc
        assert_eq!(bytes.len(), 4 + 4 + 256 * 3 + 8 + 4);
        let d = decode_sequence(&bytes).unwrap();
        assert!(d.ranks.is_empty());
        assert_eq!(d.payload_bits, 0);
    }

    #[test]
    fn round_trip_and_corruption() {
        let text = b"abracadabra, alphabetical abracadabra";
        let bytes = encode_bytes(text);
        assert_eq!(decode_sequence(&bytes).unwrap().bytes(), text);
        let mut bad = bytes.clone();
        let last_payload = bad.len() - 5;
        bad[last_payload] ^= 0x10;
        assert!(matches!(
            decode_sequence(&bad),
            Err(CoderError::CorruptStream(_))
        ));
        assert_eq!(
            decode_sequence(&bytes[..10]).unwrap_err(),
            CoderError::UnexpectedEof
        );
        let mut magic = bytes;
        magic[0] = b'X';
        assert!(matches!(
            decode_sequence(&magic),
            Err(CoderError::CorruptStream(_))
        ));
    }

    #[test]
    fn repeated_symbol_codeword_shrinks() {
        let alphabet: Vec<Vec<u8>> = (0..16u8).map(|b| vec![b]).collect();
        let mut c = Coder::new(alphabet).unwrap();
        let start = c.codeword(5).unwrap().len();
        let mut last = start;
        for _ in 0..2000 {
            let mut out = BitString::new();
            c.encode_symbol(5, &mut out).unwrap();
            last = out.len();
        }
        assert!(last <= start);
        assert!(last as f64 <= crate::optimal_tree::C_AUDIT, "{last}");
    }
}
