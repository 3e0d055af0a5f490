//! Prune-then-Huffman compression of responses, ideal code length, and
//! compression rates.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::io::{Read, Write};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::token_tree::{LeafKind, LeafSymbol, PrunedTree, Response, align, cross_entropy, entropy};

pub const BLOB_MAGIC: &[u8; 4] = b"ELCB";
pub const BLOB_VERSION: u8 = 1;

/// Prefix code over a pruned tree's alphabet, in canonical leaf order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HuffmanCode {
    alphabet: Vec<LeafSymbol>,
    codewords: Vec<Vec<bool>>,
}

#[derive(PartialEq)]
struct HeapKey {
    weight: f64,
    min_index: usize,
}

impl Eq for HeapKey {}

impl Ord for HeapKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.weight.total_cmp(&other.weight).then(self.min_index.cmp(&other.min_index))
    }
}

impl PartialOrd for HeapKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Huffman codeword bit strings for `dist`, index-aligned with it.
///
/// Ties are broken by the smallest symbol index in each subtree; when two
/// subtrees merge, the one holding the smaller index takes bit 0.
pub fn huffman_codewords(dist: &[f64]) -> Result<Vec<Vec<bool>>> {
    if dist.is_empty() {
        return Err(Error::invalid("huffman alphabet is empty"));
    }
    if dist.iter().any(|p| !p.is_finite() || *p <= 0.0) {
        return Err(Error::invalid("huffman probabilities must be positive"));
    }
    let sum: f64 = dist.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("huffman probabilities sum to {sum}")));
    }
    let n = dist.len();
    if n == 1 {
        return Ok(vec![vec![false]]);
    }
    // Nodes 0..n are leaves; merged nodes are appended with their children.
    let mut children: Vec<Option<(usize, usize)>> = vec![None; n];
    let mut heap: BinaryHeap<Reverse<(HeapKey, usize)>> = dist
        .iter()
        .enumerate()
        .map(|(i, &p)| Reverse((HeapKey { weight: p, min_index: i }, i)))
        .collect();
    while heap.len() > 1 {
        let Reverse((a, ia)) = heap.pop().expect("len > 1");
        let Reverse((b, ib)) = heap.pop().expect("len > 1");
        let (zero, one) = if a.min_index < b.min_index { (ia, ib) } else { (ib, ia) };
        children.push(Some((zero, one)));
        let key = HeapKey { weight: a.weight + b.weight, min_index: a.min_index.min(b.min_index) };
        heap.push(Reverse((key, children.len() - 1)));
    }
    let Reverse((_, root)) = heap.pop().expect("non-empty");
    let mut codewords = vec![Vec::new(); n];
    let mut stack = vec![(root, Vec::new())];
    while let Some((node, path)) = stack.pop() {
        match children[node] {
            None => codewords[node] = path,
            Some((z, o)) => {
                let mut pz = path.clone();
                pz.push(false);
                let mut po = path;
                po.push(true);
                stack.push((z, pz));
                stack.push((o, po));
            }
        }
    }
    Ok(codewords)
}

pub fn huffman_build(t: &PrunedTree) -> Result<HuffmanCode> {
    Ok(HuffmanCode { alphabet: t.leaves().to_vec(), codewords: huffman_codewords(t.probs())? })
}

impl HuffmanCode {
    pub fn alphabet(&self) -> &[LeafSymbol] {
        &self.alphabet
    }

    pub fn codewords(&self) -> &[Vec<bool>] {
        &self.codewords
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.codewords.iter().map(Vec::len).collect()
    }

    pub fn kraft_sum(&self) -> f64 {
        self.codewords.iter().map(|c| (-(c.len() as f64)).exp2()).sum()
    }

    pub fn expected_length(&self, dist: &[f64]) -> f64 {
        dist.iter().zip(&self.codewords).map(|(p, c)| p * c.len() as f64).sum()
    }

    pub fn is_prefix_free(&self) -> bool {
        let mut sorted: Vec<&Vec<bool>> = self.codewords.iter().collect();
        sorted.sort();
        sorted.windows(2).all(|w| !w[1].starts_with(w[0]))
    }

    /// SHA-256 over the code table; stored in blob headers so a blob is
    /// never decoded with a different code.
    pub fn table_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for (s, c) in self.alphabet.iter().zip(&self.codewords) {
            h.update(s.prefix.as_bytes());
            h.update(b",");
            h.update(s.kind.as_str().as_bytes());
            h.update(b",");
            h.update(c.iter().map(|&b| if b { b'1' } else { b'0' }).collect::<Vec<_>>());
            h.update(b"\n");
        }
        h.finalize().into()
    }

    fn decoder(&self) -> Vec<[Option<usize>; 2]> {
        // Children point either to another node or, offset by `leaf_base`,
        // to a symbol index.
        let mut nodes: Vec<[Option<usize>; 2]> = vec![[None, None]];
        let leaf_base = usize::MAX / 2;
        for (sym, cw) in self.codewords.iter().enumerate() {
            let mut cur = 0;
            for (i, &bit) in cw.iter().enumerate() {
                let b = bit as usize;
                if i + 1 == cw.len() {
                    nodes[cur][b] = Some(leaf_base + sym);
                } else {
                    cur = match nodes[cur][b] {
                        Some(next) => next,
                        None => {
                            nodes.push([None, None]);
                            let next = nodes.len() - 1;
                            nodes[cur][b] = Some(next);
                            next
                        }
                    };
                }
            }
        }
        nodes
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedBlob {
    pub bits: Vec<bool>,
    pub segment_count: u64,
    pub tree_depth: usize,
}

pub fn segment_count(response_length: usize, d: usize) -> usize {
    response_length.div_ceil(d)
}

/// Encodes `r` as a sequence of leaf symbols: full `d`-token chunks map to
/// CONT leaves and a non-empty remainder to an EOS leaf. The end of the
/// response is implied by the segment count.
pub fn encode(code: &HuffmanCode, t: &PrunedTree, r: &Response) -> Result<EncodedBlob> {
    if code.alphabet != t.leaves() {
        return Err(Error::invalid("code was not built for this tree"));
    }
    if !r.terminated {
        return Err(Error::Unterminated(r.to_string()));
    }
    let d = t.depth();
    let bits_str = r.bits();
    let mut bits = Vec::new();
    let mut segments = 0u64;
    for chunk in bits_str.as_bytes().chunks(d) {
        let prefix = std::str::from_utf8(chunk).expect("ascii").to_string();
        let kind = if chunk.len() == d { LeafKind::Continuation } else { LeafKind::Eos };
        let sym = LeafSymbol { prefix, kind };
        let idx = t.index_of(&sym).ok_or_else(|| Error::OutOfModel(sym.to_string()))?;
        bits.extend_from_slice(&code.codewords[idx]);
        segments += 1;
    }
    Ok(EncodedBlob { bits, segment_count: segments, tree_depth: d })
}

pub fn decode(code: &HuffmanCode, blob: &EncodedBlob) -> Result<Response> {
    let table = code.decoder();
    let leaf_base = usize::MAX / 2;
    let mut tokens = Vec::new();
    let mut cur = 0usize;
    let mut segments = 0u64;
    for &bit in &blob.bits {
        let next = table[cur][bit as usize].ok_or_else(|| Error::Blob("invalid codeword".into()))?;
        if next >= leaf_base {
            let sym = &code.alphabet[next - leaf_base];
            if sym.prefix.len() > blob.tree_depth {
                return Err(Error::DepthMismatch { expected: blob.tree_depth, found: sym.prefix.len() });
            }
            tokens.extend(sym.prefix.bytes().map(|b| b - b'0'));
            segments += 1;
            cur = 0;
        } else {
            cur = next;
        }
    }
    if cur != 0 {
        return Err(Error::Blob("payload ends inside a codeword".into()));
    }
    if segments != blob.segment_count {
        return Err(Error::Blob(format!("decoded {segments} segments, header says {}", blob.segment_count)));
    }
    Ok(Response { tokens, terminated: true })
}

/// Writes one blob: header (magic, version, depth, segment count, payload bit
/// length, code hash) then the payload packed LSB-first, zero-padded.
pub fn write_blob<W: Write>(mut w: W, code: &HuffmanCode, blob: &EncodedBlob) -> Result<()> {
    w.write_all(BLOB_MAGIC)?;
    w.write_all(&[BLOB_VERSION])?;
    w.write_all(&(blob.tree_depth as u32).to_le_bytes())?;
    w.write_all(&blob.segment_count.to_le_bytes())?;
    w.write_all(&(blob.bits.len() as u64).to_le_bytes())?;
    w.write_all(&code.table_hash())?;
    let mut bytes = vec![0u8; blob.bits.len().div_ceil(8)];
    for (i, &b) in blob.bits.iter().enumerate() {
        if b {
            bytes[i / 8] |= 1 << (i % 8);
        }
    }
    w.write_all(&bytes)?;
    Ok(())
}

/// Reads consecutive blobs until end of input.
pub fn read_blobs<R: Read>(mut r: R, code: &HuffmanCode) -> Result<Vec<EncodedBlob>> {
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    let expected_hash = code.table_hash();
    let mut pos = 0usize;
    let mut out = Vec::new();
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        let s = data.get(*pos..*pos + n).ok_or_else(|| Error::Blob("truncated blob".into()))?;
        *pos += n;
        Ok(s)
    };
    while pos < data.len() {
        if take(&mut pos, 4)? != BLOB_MAGIC {
            return Err(Error::Blob("bad magic".into()));
        }
        let version = take(&mut pos, 1)?[0];
        if version != BLOB_VERSION {
            return Err(Error::Blob(format!("unsupported version {version}")));
        }
        let depth = u32::from_le_bytes(take(&mut pos, 4)?.try_into().expect("4 bytes")) as usize;
        let segment_count = u64::from_le_bytes(take(&mut pos, 8)?.try_into().expect("8 bytes"));
        let bit_len = u64::from_le_bytes(take(&mut pos, 8)?.try_into().expect("8 bytes")) as usize;
        if take(&mut pos, 32)? != expected_hash {
            return Err(Error::Blob("code table hash mismatch".into()));
        }
        let payload = take(&mut pos, bit_len.div_ceil(8))?;
        let bits = (0..bit_len).map(|i| payload[i / 8] >> (i % 8) & 1 == 1).collect();
        out.push(EncodedBlob { bits, segment_count, tree_depth: depth });
    }
    Ok(out)
}

/// `ceil(|x|/d) · ceil(H)`. A singleton tree gives 0 here even though its
/// Huffman codeword costs one bit.
pub fn ideal_code_length(t: &PrunedTree, response_length: usize) -> u64 {
    segment_count(response_length, t.depth()) as u64 * entropy(t).ceil() as u64
}

/// Cross-entropy per token, in bits.
pub fn compression_rate(data: &PrunedTree, model: &PrunedTree) -> Result<f64> {
    Ok(cross_entropy(data, model)? / data.depth() as f64)
}

/// `cross_entropy − log2 M`, with `M` the data tree's leaf count.
pub fn normalized_rate(data: &PrunedTree, model: &PrunedTree) -> Result<f64> {
    Ok(cross_entropy(data, model)? - (data.leaf_count() as f64).log2())
}

/// Per-leaf terms `−X_data · log2 X_model` with `X = M·p` over the data
/// leaves. Their mean is the normalized rate.
pub fn normalized_rate_terms(data: &PrunedTree, model: &PrunedTree) -> Result<Vec<f64>> {
    let m = data.leaf_count() as f64;
    Ok(align(data, model)?.into_iter().map(|(p, q)| -(m * p) * (m * q).log2()).collect())
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CompressionReport {
    pub gamma: f64,
    pub normalized_gamma: f64,
    pub ideal_length: u64,
    pub huffman_expected_length: f64,
    pub entropy: f64,
    pub m: usize,
}

/// Rates of `data` under `model`, plus code statistics of the model's own
/// Huffman code for a response of `response_length` tokens.
pub fn compression_report(data: &PrunedTree, model: &PrunedTree, response_length: usize) -> Result<CompressionReport> {
    let code = huffman_build(model)?;
    Ok(CompressionReport {
        gamma: compression_rate(data, model)?,
        normalized_gamma: normalized_rate(data, model)?,
        ideal_length: ideal_code_length(model, response_length),
        huffman_expected_length: code.expected_length(model.probs()),
        entropy: entropy(model),
        m: model.leaf_count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::token_tree::{WeightedDataset, build_tree, prune};

    fn tree(entries: &[(&str, u64)], d: usize) -> PrunedTree {
        prune(&build_tree(&WeightedDataset::from_strs(entries).unwrap()).unwrap(), d).unwrap()
    }

    fn lens(dist: &[f64]) -> Vec<usize> {
        huffman_codewords(dist).unwrap().iter().map(Vec::len).collect()
    }

    #[test]
    fn small_codes() {
        assert_eq!(lens(&[0.5, 0.25, 0.25]), vec![1, 2, 2]);
        assert_eq!(lens(&[0.9, 0.1]), vec![1, 1]);
        assert_eq!(lens(&[1.0]), vec![1]);
        assert!(huffman_codewords(&[]).is_err());
        assert!(huffman_codewords(&[0.5, 0.4]).is_err());
    }

    #[test]
    fn tie_break_gives_bit_zero_to_smaller_index() {
        let cw = huffman_codewords(&[0.25; 4]).unwrap();
        assert_eq!(cw[0], vec![false, false]);
        assert_eq!(cw[3], vec![true, true]);
    }

    #[test]
    fn uniform_four_round_trip() {
        let t = tree(&[("00", 1), ("01", 1), ("10", 1), ("11", 1)], 2);
        let code = huffman_build(&t).unwrap();
        let r = Response::parse("0101").unwrap();
        let blob = encode(&code, &t, &r).unwrap();
        assert_eq!(blob.bits.len(), 4);
        assert_eq!(blob.segment_count, 2);
        assert_eq!(decode(&code, &blob).unwrap(), r);
        assert_eq!(ideal_code_length(&t, 6), 6);
        assert_eq!(ideal_code_length(&t, 5), 6);
    }

    #[test]
    fn singleton_costs_one_bit_per_segment() {
        let t = tree(&[("0", 1)], 2);
        let code = huffman_build(&t).unwrap();
        let r = Response::parse("0").unwrap();
        let blob = encode(&code, &t, &r).unwrap();
        assert_eq!(blob.bits, vec![false]);
        assert_eq!(decode(&code, &blob).unwrap(), r);
        assert_eq!(ideal_code_length(&t, 1), 0);
    }

    #[test]
    fn encode_errors() {
        let t = tree(&[("00", 1), ("1", 1)], 2);
        let code = huffman_build(&t).unwrap();
        assert!(matches!(encode(&code, &t, &Response::parse("01").unwrap()), Err(Error::OutOfModel(_))));
        let open = Response::unterminated(vec![0, 0]).unwrap();
        assert!(matches!(encode(&code, &t, &open), Err(Error::Unterminated(_))));
    }

    #[test]
    fn blob_file_round_trip() {
        let t = tree(&[("000", 5), ("01", 2), ("1", 1), ("0011", 1)], 2);
        let code = huffman_build(&t).unwrap();
        let rs: Vec<Response> = ["1", "00", "0001", "001", "0100", ""].iter().map(|s| Response::parse(s).unwrap()).collect();
        let mut buf = Vec::new();
        for r in &rs {
            write_blob(&mut buf, &code, &encode(&code, &t, r).unwrap()).unwrap();
        }
        let blobs = read_blobs(&buf[..], &code).unwrap();
        let back: Vec<Response> = blobs.iter().map(|b| decode(&code, b).unwrap()).collect();
        assert_eq!(back, rs);

        let other = huffman_build(&tree(&[("0", 1), ("1", 1)], 2)).unwrap();
        assert!(matches!(read_blobs(&buf[..], &other), Err(Error::Blob(_))));
        assert!(matches!(read_blobs(&buf[..buf.len() - 1], &code), Err(Error::Blob(_))));
    }

    #[test]
    fn rates() {
        let u = tree(&[("00", 1), ("01", 1), ("10", 1), ("11", 1)], 2);
        assert_eq!(compression_rate(&u, &u).unwrap(), 1.0);
        assert_eq!(normalized_rate(&u, &u).unwrap(), 0.0);
        let skew = tree(&[("0", 3), ("1", 1)], 2);
        assert!((normalized_rate(&skew, &skew).unwrap() + 0.188_721_875_540_867).abs() < 1e-12);
        let point = tree(&[("0", 1)], 1);
        let half = tree(&[("0", 1), ("1", 1)], 1);
        assert_eq!(compression_rate(&point, &half).unwrap(), 1.0);
        let terms = normalized_rate_terms(&skew, &skew).unwrap();
        let mean = terms.iter().sum::<f64>() / terms.len() as f64;
        assert!((mean - normalized_rate(&skew, &skew).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn report_fields() {
        let t = tree(&[("0", 3), ("1", 1)], 2);
        let rep = compression_report(&t, &t, 10).unwrap();
        assert_eq!(rep.ideal_length, 5);
        assert_eq!(rep.huffman_expected_length, 1.0);
        assert_eq!(rep.m, 2);
        assert!(rep.entropy <= rep.huffman_expected_length && rep.huffman_expected_length < rep.entropy + 1.0);
    }
}
