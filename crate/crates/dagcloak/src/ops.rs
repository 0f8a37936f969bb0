//! Executable semantics for every node kind.
//!
//! All ops are pure: the outputs' logical bytes depend only on the inputs'
//! logical bytes, the node params, and the seed. Padding bytes are never read.
//! Multi-input nodes operate on the concatenation of their inputs' logical
//! bytes, in argument order.
//!
//! Pinned semantics:
//! - `Sort`: byte-wise ascending sort (counting sort).
//! - `Search`: binary search for `needle` (default 0) over the sorted bytes;
//!   output is the 8-byte little-endian match index, or the insertion point
//!   when absent.
//! - `Hash`: SHA-256 digest (32 bytes).
//! - `Encrypt`/`Decrypt`: keystream XOR under `key` (default pinned); the two
//!   are the same involution, so Decrypt(Encrypt(x)) == x for a shared key.
//! - `Compress`/`Decompress`: run-length coding as (count, byte) pairs with
//!   1 <= count <= 255; a lossless pair.
//! - `Downsample`: keep every `k`-th byte starting at index 0 (default k=2).
//! - `Normalize`: affine remap of the byte range onto [0, 255]; constant
//!   buffers map to 0.
//! - `Split`: `parts` near-equal contiguous chunks (default 2); earlier
//!   chunks take the remainder.
//! - `Train`/`Evaluate`: fixed-iteration arithmetic kernels, 64-byte output.
//! - `Fake`: emits seed-derived dead bytes sized by `cost_ms`; its simulated
//!   cost is charged by the executor, never by data flow.
//! - `Custom`: identity on the concatenated logical bytes.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{OpKind, Params};
use crate::payload::Payload;
use crate::seed::splitmix64;

pub const DEFAULT_KEY: u64 = 0x5165_76a1_06d9_13e7;
pub const DEFAULT_TRAIN_ITERS: u64 = 2000;
pub const DEFAULT_EVALUATE_ITERS: u64 = 800;

/// Run one node kind over its input payloads.
pub fn run_op(
    kind: &OpKind,
    inputs: &[Payload],
    params: &Params,
    seed: u64,
) -> Result<Vec<Payload>> {
    if inputs.is_empty() {
        return Err(Error::Arity {
            kind: kind.tag().to_string(),
            expected: ">= 1".into(),
            got: 0,
        });
    }
    let data = concat_logical(inputs);
    let out = match kind {
        OpKind::Sort => vec![counting_sort(&data)],
        OpKind::Search => {
            let needle = params.get("needle").copied().unwrap_or(0.0) as u8;
            let sorted = counting_sort(&data);
            let idx = match sorted.partition_point(|b| *b < needle) {
                i if sorted.get(i) == Some(&needle) => i,
                i => i,
            } as u64;
            vec![idx.to_le_bytes().to_vec()]
        }
        OpKind::Hash => vec![Sha256::digest(&data).to_vec()],
        OpKind::Encrypt | OpKind::Decrypt => {
            let key = params
                .get("key")
                .map(|k| *k as u64)
                .unwrap_or(DEFAULT_KEY);
            vec![xor_keystream(&data, key)]
        }
        OpKind::Compress => vec![rle_encode(&data)],
        OpKind::Decompress => vec![rle_decode(&data)?],
        OpKind::Downsample => {
            let k = params.get("k").copied().unwrap_or(2.0).max(1.0) as usize;
            vec![data.iter().step_by(k).copied().collect()]
        }
        OpKind::Normalize => vec![normalize(&data)],
        OpKind::Split => {
            let parts = params.get("parts").copied().unwrap_or(2.0).max(1.0) as usize;
            return Ok(split_chunks(&data, parts)
                .into_iter()
                .map(Payload::new)
                .collect());
        }
        OpKind::Train => {
            let iters = params
                .get("iters")
                .map(|i| *i as u64)
                .unwrap_or(DEFAULT_TRAIN_ITERS);
            vec![arith_kernel(&data, iters, 0x7261_696e)]
        }
        OpKind::Evaluate => {
            let iters = params
                .get("iters")
                .map(|i| *i as u64)
                .unwrap_or(DEFAULT_EVALUATE_ITERS);
            vec![arith_kernel(&data, iters, 0x6576_616c)]
        }
        OpKind::Fake => {
            let cost_ms = params.get("cost_ms").copied().unwrap_or(1.0).max(0.0);
            vec![fake_output(cost_ms, seed)]
        }
        OpKind::Custom(_) => vec![data],
    };
    Ok(out.into_iter().map(Payload::new).collect())
}

fn concat_logical(inputs: &[Payload]) -> Vec<u8> {
    let total: usize = inputs.iter().map(|p| p.logical_len()).sum();
    let mut buf = Vec::with_capacity(total);
    for p in inputs {
        buf.extend_from_slice(p.logical());
    }
    buf
}

fn counting_sort(data: &[u8]) -> Vec<u8> {
    let mut counts = [0usize; 256];
    for b in data {
        counts[*b as usize] += 1;
    }
    let mut out = Vec::with_capacity(data.len());
    for (b, c) in counts.iter().enumerate() {
        out.extend(std::iter::repeat(b as u8).take(*c));
    }
    out
}

fn xor_keystream(data: &[u8], key: u64) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len());
    let mut state = key;
    let mut word = 0u64;
    for (i, b) in data.iter().enumerate() {
        if i % 8 == 0 {
            state = splitmix64(state);
            word = state;
        }
        out.push(b ^ (word & 0xff) as u8);
        word >>= 8;
    }
    out
}

fn rle_encode(data: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < data.len() {
        let byte = data[i];
        let mut run = 1usize;
        while run < 255 && i + run < data.len() && data[i + run] == byte {
            run += 1;
        }
        out.push(run as u8);
        out.push(byte);
        i += run;
    }
    out
}

fn rle_decode(data: &[u8]) -> Result<Vec<u8>> {
    if data.len() % 2 != 0 {
        return Err(Error::Format("run-length stream has odd length".into()));
    }
    let mut out = Vec::new();
    for pair in data.chunks_exact(2) {
        if pair[0] == 0 {
            return Err(Error::Format("run-length stream has zero-length run".into()));
        }
        out.extend(std::iter::repeat(pair[1]).take(pair[0] as usize));
    }
    Ok(out)
}

fn normalize(data: &[u8]) -> Vec<u8> {
    let (min, max) = data
        .iter()
        .fold((u8::MAX, u8::MIN), |(lo, hi), b| (lo.min(*b), hi.max(*b)));
    if min >= max {
        return vec![0; data.len()];
    }
    let span = (max - min) as u32;
    data.iter()
        .map(|b| (((*b - min) as u32 * 255) / span) as u8)
        .collect()
}

fn split_chunks(data: &[u8], parts: usize) -> Vec<Vec<u8>> {
    let base = data.len() / parts;
    let rem = data.len() % parts;
    let mut out = Vec::with_capacity(parts);
    let mut offset = 0;
    for i in 0..parts {
        let len = base + usize::from(i < rem);
        out.push(data[offset..offset + len].to_vec());
        offset += len;
    }
    out
}

fn arith_kernel(data: &[u8], iters: u64, salt: u64) -> Vec<u8> {
    let mut state = [salt.wrapping_mul(0x9e37_79b9_7f4a_7c15); 8];
    for (i, b) in data.iter().enumerate() {
        state[i % 8] = state[i % 8].wrapping_add((*b as u64) << (i % 48));
    }
    for it in 0..iters {
        for lane in 0..8 {
            let mixed = splitmix64(state[lane] ^ it);
            state[lane] = state[lane]
                .rotate_left(17)
                .wrapping_add(mixed)
                .wrapping_mul(0x2545_f491_4f6c_dd1d);
        }
    }
    let mut out = Vec::with_capacity(64);
    for lane in state {
        out.extend_from_slice(&lane.to_le_bytes());
    }
    out
}

fn fake_output(cost_ms: f64, seed: u64) -> Vec<u8> {
    let len = ((cost_ms * 32.0) as usize).clamp(8, 1 << 16);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Params;

    fn p(bytes: &[u8]) -> Payload {
        Payload::new(bytes.to_vec())
    }

    fn run1(kind: OpKind, input: &[u8], params: Params) -> Vec<u8> {
        run_op(&kind, &[p(input)], &params, 7).unwrap()[0]
            .logical()
            .to_vec()
    }

    #[test]
    fn encrypt_then_decrypt_restores_logical_bytes() {
        let data = b"attack at dawn, or maybe brunch";
        let ct = run1(OpKind::Encrypt, data, Params::new());
        assert_ne!(ct, data.to_vec());
        let pt = run1(OpKind::Decrypt, &ct, Params::new());
        assert_eq!(pt, data.to_vec());
    }

    /// Oracle: 1024 identical bytes = four full runs of 255 plus one run of
    /// 4, i.e. exactly five (count, byte) pairs.
    #[test]
    fn rle_constant_buffer_matches_hand_encoding() {
        let data = vec![7u8; 1024];
        let encoded = run1(OpKind::Compress, &data, Params::new());
        assert_eq!(encoded, vec![255, 7, 255, 7, 255, 7, 255, 7, 4, 7]);
        assert!(encoded.len() <= data.len());
        let decoded = run1(OpKind::Decompress, &encoded, Params::new());
        assert_eq!(decoded, data);
    }

    #[test]
    fn hash_is_stable_across_runs() {
        let input = b"0123456789abcdef";
        let a = run1(OpKind::Hash, input, Params::new());
        let b = run1(OpKind::Hash, input, Params::new());
        assert_eq!(a.len(), 32);
        assert_eq!(a, b);
    }

    #[test]
    fn sort_orders_bytes() {
        assert_eq!(run1(OpKind::Sort, &[3, 1, 2, 1], Params::new()), vec![1, 1, 2, 3]);
    }

    #[test]
    fn search_reports_match_index() {
        let mut params = Params::new();
        params.insert("needle".into(), 3.0);
        let out = run1(OpKind::Search, &[9, 3, 7, 1], params);
        // sorted: [1, 3, 7, 9], needle 3 at index 1
        assert_eq!(out, 1u64.to_le_bytes().to_vec());
    }

    #[test]
    fn decompress_rejects_malformed_streams() {
        let odd = run_op(&OpKind::Decompress, &[p(&[1, 2, 3])], &Params::new(), 0);
        assert!(matches!(odd, Err(Error::Format(_))));
        let zero_run = run_op(&OpKind::Decompress, &[p(&[0, 9])], &Params::new(), 0);
        assert!(matches!(zero_run, Err(Error::Format(_))));
    }

    #[test]
    fn empty_input_list_is_an_arity_error() {
        assert!(matches!(
            run_op(&OpKind::Sort, &[], &Params::new(), 0),
            Err(Error::Arity { .. })
        ));
    }

    #[test]
    fn split_partitions_with_remainder_first() {
        let mut params = Params::new();
        params.insert("parts".into(), 3.0);
        let outs = run_op(&OpKind::Split, &[p(&[1, 2, 3, 4, 5, 6, 7])], &params, 0).unwrap();
        let lens: Vec<usize> = outs.iter().map(|o| o.logical_len()).collect();
        assert_eq!(lens, vec![3, 2, 2]);
        let joined: Vec<u8> = outs.iter().flat_map(|o| o.logical().to_vec()).collect();
        assert_eq!(joined, vec![1, 2, 3, 4, 5, 6, 7]);
    }

    #[test]
    fn normalize_remaps_to_full_range() {
        let out = run1(OpKind::Normalize, &[10, 20, 30], Params::new());
        assert_eq!(out, vec![0, 127, 255]);
        assert_eq!(run1(OpKind::Normalize, &[5, 5], Params::new()), vec![0, 0]);
    }

    #[test]
    fn downsample_keeps_every_kth_byte() {
        let mut params = Params::new();
        params.insert("k".into(), 3.0);
        assert_eq!(run1(OpKind::Downsample, &[0, 1, 2, 3, 4, 5, 6], params), vec![0, 3, 6]);
    }

    #[test]
    fn kernels_are_deterministic_and_64_bytes() {
        let a = run1(OpKind::Train, b"data", Params::new());
        let b = run1(OpKind::Train, b"data", Params::new());
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);
        assert_eq!(run1(OpKind::Evaluate, b"data", Params::new()).len(), 64);
    }

    #[test]
    fn padding_never_reaches_op_logic() {
        let mut padded = p(b"payload");
        padded.pad(13);
        let plain = p(b"payload");
        for kind in [
            OpKind::Sort,
            OpKind::Hash,
            OpKind::Encrypt,
            OpKind::Compress,
            OpKind::Normalize,
            OpKind::Train,
        ] {
            let a = run_op(&kind, &[padded.clone()], &Params::new(), 1).unwrap();
            let b = run_op(&kind, &[plain.clone()], &Params::new(), 1).unwrap();
            assert_eq!(a[0].logical(), b[0].logical(), "kind {kind:?}");
        }
    }

    #[test]
    fn multi_input_ops_concatenate_in_argument_order() {
        let out = run_op(
            &OpKind::Custom("join".into()),
            &[p(b"ab"), p(b"cd")],
            &Params::new(),
            0,
        )
        .unwrap();
        assert_eq!(out[0].logical(), b"abcd");
    }
}
