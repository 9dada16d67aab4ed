//! Prefix-free codebooks that turn words into fixed-length bitstrings.
//!
//! A word is encoded as the concatenation of its symbol codewords, followed by
//! the END codeword, followed by zero padding up to the global length `r`.
//! Characters missing from the codebook map to the UNKNOWN symbol, so the
//! encoding of a word containing them is not invertible.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::bits::{BitString, MAX_BITS};
use crate::error::{Error, Result};

/// Codebook symbol. Ordered with every character before END before UNKNOWN.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Symbol {
    Char(char),
    End,
    Unknown,
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::Char(c) => write!(f, "{}", *c as u32),
            Symbol::End => f.write_str("END"),
            Symbol::Unknown => f.write_str("UNK"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CodebookMode {
    Huffman,
    FixedWidth(u8),
}

#[derive(Clone, Copy, Debug, Default)]
struct TrieNode {
    child: [u32; 2],
    symbol: Option<Symbol>,
}

const NO_CHILD: u32 = u32::MAX;

/// Result of greedily decoding a bitstring.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decoding {
    /// Symbols decoded in order, including a final END if one was reached.
    pub symbols: Vec<Symbol>,
    /// Bit position just after the END codeword, if END was decoded.
    pub end_at: Option<usize>,
    /// Bits consumed by complete codewords.
    pub consumed: usize,
    /// Set when the bits walk off the code tree (only possible for codebooks
    /// whose tree is not full, such as fixed-width ones).
    pub invalid: bool,
}

/// Prefix-free map from symbols to codewords. Immutable once built.
#[derive(Clone, Debug)]
pub struct Codebook {
    mode: CodebookMode,
    codes: BTreeMap<Symbol, BitString>,
    trie: Vec<TrieNode>,
}

impl Codebook {
    /// Validates `codes` (END and UNKNOWN present, prefix-free) and builds the decoder.
    pub fn from_codes(mode: CodebookMode, codes: BTreeMap<Symbol, BitString>) -> Result<Self> {
        for reserved in [Symbol::End, Symbol::Unknown] {
            if !codes.contains_key(&reserved) {
                return Err(Error::InvalidCodebook(format!("missing codeword for {reserved}")));
            }
        }
        let mut trie = vec![TrieNode {
            child: [NO_CHILD; 2],
            symbol: None,
        }];
        for (&symbol, code) in &codes {
            if code.is_empty() {
                return Err(Error::InvalidCodebook(format!("empty codeword for {symbol}")));
            }
            let mut node = 0usize;
            for bit in code.iter() {
                if trie[node].symbol.is_some() {
                    return Err(Error::InvalidCodebook(format!(
                        "codeword {code} for {symbol} extends another codeword"
                    )));
                }
                let b = bit as usize;
                if trie[node].child[b] == NO_CHILD {
                    trie.push(TrieNode {
                        child: [NO_CHILD; 2],
                        symbol: None,
                    });
                    trie[node].child[b] = (trie.len() - 1) as u32;
                }
                node = trie[node].child[b] as usize;
            }
            if trie[node].symbol.is_some() || trie[node].child != [NO_CHILD; 2] {
                return Err(Error::InvalidCodebook(format!(
                    "codeword {code} for {symbol} is a prefix of, or equal to, another codeword"
                )));
            }
            trie[node].symbol = Some(symbol);
        }
        Ok(Self { mode, codes, trie })
    }

    /// Huffman code over character counts. END and UNKNOWN are added with count
    /// 1 when absent. Ties merge the node whose smallest symbol sorts first.
    pub fn build_huffman(frequencies: &BTreeMap<char, u64>) -> Result<Self> {
        let mut weights: BTreeMap<Symbol, u64> = frequencies
            .iter()
            .filter(|(_, &c)| c > 0)
            .map(|(&ch, &c)| (Symbol::Char(ch), c))
            .collect();
        if weights.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        weights.entry(Symbol::End).or_insert(1);
        weights.entry(Symbol::Unknown).or_insert(1);
        let lengths = huffman_code_lengths(&weights);
        let codes = huffman_codes(&weights)?;
        debug_assert!(codes.iter().all(|(s, c)| lengths[s] == c.len()));
        Self::from_codes(CodebookMode::Huffman, codes)
    }

    /// Fixed-width code: the distinct characters of `alphabet` in sorted order,
    /// then END, then UNKNOWN, numbered consecutively from zero.
    pub fn fixed_width(bits_per_symbol: u8, alphabet: impl IntoIterator<Item = char>) -> Result<Self> {
        let mut symbols: Vec<Symbol> = alphabet.into_iter().map(Symbol::Char).collect();
        symbols.sort();
        symbols.dedup();
        symbols.push(Symbol::End);
        symbols.push(Symbol::Unknown);
        let k = bits_per_symbol as usize;
        if k == 0 || k > 16 || symbols.len() > 1usize << k {
            return Err(Error::InvalidCodebook(format!(
                "{} symbols do not fit in {k}-bit codes",
                symbols.len()
            )));
        }
        let codes = symbols
            .into_iter()
            .enumerate()
            .map(|(i, s)| Ok((s, BitString::from_value(i as u64, k)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Self::from_codes(CodebookMode::FixedWidth(bits_per_symbol), codes)
    }

    /// The 5-bit lowercase-letter code used for cross-method comparisons.
    pub fn lowercase_5bit() -> Self {
        Self::fixed_width(5, 'a'..='z').expect("28 symbols fit in 5 bits")
    }

    pub fn mode(&self) -> CodebookMode {
        self.mode
    }

    pub fn code(&self, symbol: Symbol) -> Option<BitString> {
        self.codes.get(&symbol).copied()
    }

    pub fn codes(&self) -> impl Iterator<Item = (Symbol, BitString)> + '_ {
        self.codes.iter().map(|(&s, &c)| (s, c))
    }

    fn symbol_for(&self, ch: char) -> Symbol {
        let s = Symbol::Char(ch);
        if self.codes.contains_key(&s) {
            s
        } else {
            Symbol::Unknown
        }
    }

    /// Bits needed for the word's codewords plus END.
    pub fn encoded_len(&self, word: &str) -> usize {
        word.chars().map(|c| self.codes[&self.symbol_for(c)].len()).sum::<usize>()
            + self.codes[&Symbol::End].len()
    }

    /// Codewords, END, then zero padding to exactly `r` bits.
    pub fn encode(&self, word: &str, r: usize) -> Result<BitString> {
        let needed = self.encoded_len(word);
        if needed > r || r > MAX_BITS {
            return Err(Error::WordTooLong {
                needed,
                limit: r.min(MAX_BITS),
            });
        }
        let mut out = BitString::empty();
        for ch in word.chars() {
            out = out.concat(&self.codes[&self.symbol_for(ch)])?;
        }
        out = out.concat(&self.codes[&Symbol::End])?;
        out.pad_to(r)
    }

    /// Greedy decode, stopping after END.
    pub fn decode(&self, bits: &BitString) -> Decoding {
        let mut symbols = Vec::new();
        let mut node = 0usize;
        let mut consumed = 0;
        for (i, bit) in bits.iter().enumerate() {
            let next = self.trie[node].child[bit as usize];
            if next == NO_CHILD {
                return Decoding {
                    symbols,
                    end_at: None,
                    consumed,
                    invalid: true,
                };
            }
            node = next as usize;
            if let Some(symbol) = self.trie[node].symbol {
                symbols.push(symbol);
                consumed = i + 1;
                node = 0;
                if symbol == Symbol::End {
                    return Decoding {
                        symbols,
                        end_at: Some(consumed),
                        consumed,
                        invalid: false,
                    };
                }
            }
        }
        Decoding {
            symbols,
            end_at: None,
            consumed,
            invalid: false,
        }
    }

    /// True iff decoding consumes every bit and the last symbol is END.
    pub fn is_complete(&self, prefix: &BitString) -> bool {
        self.decode(prefix).end_at == Some(prefix.len())
    }

    /// True iff the prefix contains END followed only by zero padding, i.e. it
    /// determines a single encoded word.
    pub fn is_terminated(&self, prefix: &BitString) -> bool {
        match self.decode(prefix).end_at {
            Some(end) => prefix.is_zero_from(end),
            None => false,
        }
    }

    /// The word a terminated prefix stands for. UNKNOWN decodes to U+FFFD.
    pub fn decode_word(&self, prefix: &BitString) -> Option<String> {
        let d = self.decode(prefix);
        let end = d.end_at?;
        if !prefix.is_zero_from(end) {
            return None;
        }
        Some(
            d.symbols
                .iter()
                .filter_map(|s| match s {
                    Symbol::Char(c) => Some(*c),
                    Symbol::Unknown => Some(char::REPLACEMENT_CHARACTER),
                    Symbol::End => None,
                })
                .collect(),
        )
    }

    /// Writes one `<codepoint>\t<bits>` line per symbol, with `END` and `UNK`
    /// lines for the reserved symbols.
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (symbol, code) in &self.codes {
            writeln!(out, "{symbol}\t{code}")?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(input: R) -> Result<Self> {
        let mut codes = BTreeMap::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::Parse(e.to_string()))?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let (sym, bits) = line.split_once('\t').ok_or_else(|| {
                Error::Parse(format!("codebook line {}: expected <symbol>\\t<bits>", lineno + 1))
            })?;
            let symbol = match sym {
                "END" => Symbol::End,
                "UNK" => Symbol::Unknown,
                cp => {
                    let n: u32 = cp.parse().map_err(|_| {
                        Error::Parse(format!("codebook line {}: bad codepoint {cp:?}", lineno + 1))
                    })?;
                    Symbol::Char(char::from_u32(n).ok_or_else(|| {
                        Error::Parse(format!("codebook line {}: {n} is not a scalar value", lineno + 1))
                    })?)
                }
            };
            let code: BitString = bits.parse()?;
            if codes.insert(symbol, code).is_some() {
                return Err(Error::Parse(format!(
                    "codebook line {}: duplicate symbol {symbol}",
                    lineno + 1
                )));
            }
        }
        let mut lengths = codes.values().map(|c| c.len());
        let first = lengths.next().unwrap_or(0);
        let mode = if lengths.all(|l| l == first) && first > 0 && first <= u8::MAX as usize {
            CodebookMode::FixedWidth(first as u8)
        } else {
            CodebookMode::Huffman
        };
        Self::from_codes(mode, codes)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_text(std::io::BufReader::new(file))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_text(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Character counts of a weighted word list.
pub fn char_frequencies<'a>(words: impl IntoIterator<Item = (&'a str, u64)>) -> BTreeMap<char, u64> {
    let mut freq = BTreeMap::new();
    for (w, n) in words {
        for c in w.chars() {
            *freq.entry(c).or_insert(0) += n;
        }
    }
    freq
}

enum HuffNode {
    Leaf(Symbol),
    Internal(usize, usize),
}

fn huffman_tree(weights: &BTreeMap<Symbol, u64>) -> (Vec<HuffNode>, usize) {
    let mut nodes = Vec::with_capacity(weights.len() * 2);
    // (count, smallest contained symbol, node id)
    let mut heap = BinaryHeap::new();
    for (&s, &w) in weights {
        nodes.push(HuffNode::Leaf(s));
        heap.push(Reverse((w, s, nodes.len() - 1)));
    }
    while heap.len() > 1 {
        let Reverse((wa, sa, a)) = heap.pop().unwrap();
        let Reverse((wb, sb, b)) = heap.pop().unwrap();
        nodes.push(HuffNode::Internal(a, b));
        heap.push(Reverse((wa + wb, sa.min(sb), nodes.len() - 1)));
    }
    let root = heap.pop().map(|Reverse((_, _, id))| id).unwrap_or(0);
    (nodes, root)
}

/// Codeword length per symbol of the Huffman tree used by [`Codebook::build_huffman`].
pub fn huffman_code_lengths(weights: &BTreeMap<Symbol, u64>) -> BTreeMap<Symbol, usize> {
    let (nodes, root) = huffman_tree(weights);
    let mut out = BTreeMap::new();
    if nodes.is_empty() {
        return out;
    }
    let mut stack = vec![(root, 0usize)];
    while let Some((id, depth)) = stack.pop() {
        match nodes[id] {
            HuffNode::Leaf(s) => {
                out.insert(s, depth.max(1));
            }
            HuffNode::Internal(a, b) => {
                stack.push((a, depth + 1));
                stack.push((b, depth + 1));
            }
        }
    }
    out
}

fn huffman_codes(weights: &BTreeMap<Symbol, u64>) -> Result<BTreeMap<Symbol, BitString>> {
    let (nodes, root) = huffman_tree(weights);
    let mut out = BTreeMap::new();
    let mut stack = vec![(root, BitString::empty())];
    while let Some((id, code)) = stack.pop() {
        match nodes[id] {
            HuffNode::Leaf(s) => {
                out.insert(s, code);
            }
            HuffNode::Internal(a, b) => {
                let mut left = code;
                left.push(false)
                    .map_err(|_| Error::InvalidCodebook("Huffman codeword longer than 64 bits".into()))?;
                let mut right = code;
                right.push(true)
                    .map_err(|_| Error::InvalidCodebook("Huffman codeword longer than 64 bits".into()))?;
                stack.push((a, left));
                stack.push((b, right));
            }
        }
    }
    Ok(out)
}
