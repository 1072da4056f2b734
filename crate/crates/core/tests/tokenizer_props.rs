use emoclf::tokenizer::{
    basic_tokenize, encode, mask_tokens, wordpiece_tokenize, Vocabulary, CLS, MASK, PAD, SEP, UNK,
};
use proptest::prelude::*;

const WORDS: [&str; 10] = ["okay", "good", "night", "i", "am", "so", "happy", "un", "##believ", "##able"];

fn vocab() -> Vocabulary {
    Vocabulary::with_specials(WORDS.iter().copied().chain(["!", "?", ","])).unwrap()
}

fn sentence() -> impl Strategy<Value = String> {
    let word = prop::sample::select(vec!["okay", "good", "night", "I", "am", "so", "HAPPY", "unbelievable", "!", "?", ",", "zebra"]);
    prop::collection::vec(word, 0..60).prop_map(|w| w.join(" "))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn pieces_rejoin_to_the_basic_words(text in sentence()) {
        let v = vocab();
        let pieces = wordpiece_tokenize(&text, &v);
        let mut rejoined: Vec<String> = Vec::new();
        for p in &pieces {
            match p.strip_prefix("##") {
                Some(rest) => rejoined.last_mut().unwrap().push_str(rest),
                None => rejoined.push(p.clone()),
            }
        }
        let expected: Vec<String> = basic_tokenize(&text)
            .into_iter()
            .map(|w| if w == "zebra" { UNK.to_string() } else { w })
            .collect();
        prop_assert_eq!(rejoined, expected);
    }

    #[test]
    fn encode_layout(text in sentence(), max_len in 3usize..48) {
        let v = vocab();
        let e = encode(&text, &v, max_len);
        let n_pieces = wordpiece_tokenize(&text, &v).len();
        let content = n_pieces.min(max_len - 2);
        prop_assert_eq!(e.token_ids.len(), max_len);
        prop_assert_eq!(e.attention_mask.len(), max_len);
        prop_assert_eq!(e.segment_ids.len(), max_len);
        prop_assert_eq!(e.original_length, content + 2);
        prop_assert_eq!(e.token_ids[0], v.id(CLS).unwrap());
        prop_assert_eq!(e.token_ids[content + 1], v.id(SEP).unwrap());
        for i in 0..max_len {
            let real = i < content + 2;
            prop_assert_eq!(e.attention_mask[i] == 1, real);
            if !real {
                prop_assert_eq!(e.token_ids[i], v.id(PAD).unwrap());
            }
        }
    }

    #[test]
    fn masking_only_touches_content(text in sentence(), prob in 0.0f64..=1.0, seed in any::<u64>()) {
        let v = vocab();
        let e = encode(&text, &v, 64);
        let m = mask_tokens(&e, &v, prob, seed);
        prop_assert_eq!(&m, &mask_tokens(&e, &v, prob, seed));
        for i in 0..e.len() {
            match m.targets[i] {
                Some(original) => {
                    prop_assert_eq!(original, e.token_ids[i]);
                    prop_assert_eq!(m.input.token_ids[i], v.id(MASK).unwrap());
                    prop_assert!(e.attention_mask[i] == 1 && !v.is_special(original));
                }
                None => prop_assert_eq!(m.input.token_ids[i], e.token_ids[i]),
            }
        }
        prop_assert_eq!(&m.input.attention_mask, &e.attention_mask);
        if prob == 1.0 {
            prop_assert_eq!(m.masked_count(), e.original_length - 2);
        }
    }
}
