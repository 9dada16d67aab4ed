use std::collections::BTreeMap;

use prefixhh::encoding::{huffman_code_lengths, Codebook, Symbol};
use prefixhh::BitString;
use proptest::prelude::*;

fn is_prefix_free(cb: &Codebook) -> bool {
    let codes: Vec<BitString> = cb.codes().map(|(_, c)| c).collect();
    codes
        .iter()
        .enumerate()
        .all(|(i, a)| codes.iter().enumerate().all(|(j, b)| i == j || !a.is_prefix_of(b)))
}

proptest! {
    #[test]
    fn fixed_width_round_trip(word in "[a-z]{0,11}") {
        let cb = Codebook::lowercase_5bit();
        let bits = cb.encode(&word, 60).unwrap();
        prop_assert_eq!(bits.len(), 60);
        prop_assert_eq!(cb.decode_word(&bits), Some(word.clone()));
        prop_assert!(cb.is_terminated(&bits));
        // No proper prefix shorter than the content plus END is terminated.
        let content = 5 * word.chars().count();
        prop_assert!(!cb.is_terminated(&bits.prefix(content)));
    }

    #[test]
    fn huffman_codes_are_prefix_free_and_round_trip(freqs in proptest::collection::btree_map("[a-h]", 1u64..500, 1..8), word in "[a-h]{0,6}") {
        let freqs: BTreeMap<char, u64> = freqs.into_iter().map(|(k, v)| (k.chars().next().unwrap(), v)).collect();
        let cb = Codebook::build_huffman(&freqs).unwrap();
        prop_assert!(is_prefix_free(&cb));
        let bits = cb.encode(&word, 64);
        if let Ok(bits) = bits {
            let expect: String = word.chars().map(|c| if freqs.contains_key(&c) { c } else { '\u{FFFD}' }).collect();
            prop_assert_eq!(cb.decode_word(&bits), Some(expect));
        }
    }

    #[test]
    fn huffman_lengths_satisfy_kraft_with_equality(weights in proptest::collection::vec(1u64..1000, 2..20)) {
        let w: BTreeMap<Symbol, u64> = weights.iter().enumerate().map(|(i, &c)| (Symbol::Char(char::from(b'a' + i as u8)), c)).collect();
        let lens = huffman_code_lengths(&w);
        let kraft: f64 = lens.values().map(|&l| 0.5f64.powi(l as i32)).sum();
        prop_assert!((kraft - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bitstring_prefix_and_concat(v in any::<u64>(), len in 0usize..=64, cut in 0usize..=64) {
        let cut = cut.min(len);
        let mask = if len == 64 { u64::MAX } else { (1u64 << len) - 1 };
        let b = BitString::from_value(v & mask, len).unwrap();
        let head = b.prefix(cut);
        let tail = b.slice(cut, len - cut);
        prop_assert_eq!(head.concat(&tail).unwrap(), b);
        prop_assert!(head.is_prefix_of(&b));
        let text = b.to_string();
        prop_assert_eq!(text.parse::<BitString>().unwrap(), b);
    }
}

#[test]
fn expected_huffman_cost_is_optimal_on_a_small_instance() {
    // Brute force: among all length assignments satisfying Kraft with
    // lengths up to 5, none beats the Huffman cost.
    let weights = [7u64, 5, 3, 2, 1];
    let w: BTreeMap<Symbol, u64> = weights.iter().enumerate().map(|(i, &c)| (Symbol::Char(char::from(b'a' + i as u8)), c)).collect();
    let lens = huffman_code_lengths(&w);
    let cost: u64 = w.iter().map(|(s, &c)| c * lens[s] as u64).sum();
    let mut best = u64::MAX;
    for code in 0..5u32.pow(5) {
        let ls: Vec<u32> = (0..5).map(|i| code / 5u32.pow(i) % 5 + 1).collect();
        let kraft: f64 = ls.iter().map(|&l| 0.5f64.powi(l as i32)).sum();
        if kraft <= 1.0 + 1e-12 {
            best = best.min(ls.iter().zip(&weights).map(|(&l, &c)| l as u64 * c).sum());
        }
    }
    assert_eq!(cost, best);
}
